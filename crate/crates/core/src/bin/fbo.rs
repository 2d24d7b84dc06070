fn main() {
    std::process::exit(fedbilevel::cli::main_with_args(std::env::args_os()));
}
