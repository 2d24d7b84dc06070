use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedbilevel::fixture::write_instance;
use fedbilevel::problem::{BilevelInstance, ClientData};
use nalgebra::{DMatrix, DVector};

fn fbo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbo"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FBO_WORKERS")
        .output()
        .expect("fbo binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const CANONICAL: &str = r#"
algorithm = "simfbo"
instance = "canonical_1d"
participants = 1
rounds = 300
eta_y = 0.1
eta_v = 0.1
eta_x = 0.1
gamma_y = 0.5
gamma_v = 0.5
gamma_x = 0.5
"#;

/// One client, `d_x = d_y = 1`, with a nonzero upper-level `E` block.
fn one_d_with_e(b: f64) -> BilevelInstance {
    BilevelInstance::new(
        vec![1.0],
        vec![ClientData {
            a: DMatrix::from_element(1, 1, 2.0),
            b: DMatrix::from_element(1, 1, b),
            c: DVector::from_element(1, 0.0),
            d: DMatrix::from_element(1, 1, 1.0),
            y_ref: DVector::from_element(1, 1.0),
            e: DMatrix::from_element(1, 1, 1.0),
            x_ref: DVector::from_element(1, 0.5),
        }],
    )
    .unwrap()
}

fn fixture_config(fixture: &Path, extra: &str) -> String {
    format!(
        "algorithm = \"simfbo\"\ninstance = \"fixture\"\ninstance_path = {:?}\nparticipants = 1\nrounds = 400\nx0 = [0.3]\nstep_preset = \"mnist_mlp\"\n{extra}",
        fixture.to_str().unwrap()
    )
}

#[test]
fn run_writes_metrics_and_summary_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", &format!("{CANONICAL}sigma = 0.05\n"));
    for out in ["a", "b"] {
        let res = fbo(&["run", "--config", "c.toml", "--out", out, "--seed", "7", "--quiet"], dir.path());
        assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
        assert!(res.stdout.is_empty());
    }
    let a = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 302);
    assert!(text.starts_with(fedbilevel::runner::METRICS_HEADER));
    let summary = fs::read_to_string(dir.path().join("a/summary.txt")).unwrap();
    assert!(summary.contains("status = \"ok\""));
    assert!(summary.contains("seed = 7"));
    assert!(summary.contains("min_grad_phi_sq"));
    assert!(summary.contains("wall_time_s"));
}

#[test]
fn divergent_server_stepsize_exits_one_and_names_round() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.txt");
    write_instance(&inst, &one_d_with_e(1.0)).unwrap();
    write(dir.path(), "div.toml", &fixture_config(&inst, "gamma_x = 1000.0\n"));
    let res = fbo(&["run", "--config", "div.toml", "--out", "out"], dir.path());
    assert_eq!(res.status.code(), Some(1), "{}", stderr(&res));
    let summary = fs::read_to_string(dir.path().join("out/summary.txt")).unwrap();
    assert!(summary.contains("divergence in round"), "{summary}");
    assert!(!dir.path().join("out/metrics.csv").exists());
    assert!(dir.path().join("out/metrics.csv.partial").exists());
}

#[test]
fn invalid_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let res = fbo(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("missing.toml"));

    let text = "algorithm = \"simfbo\"\nn = 3\nd_x = 2\nd_y = 2\nparticipants = 5\nrounds = 10\nstep_preset = \"mnist_mlp\"\n";
    write(dir.path(), "p.toml", text);
    let res = fbo(&["run", "--config", "p.toml"], dir.path());
    assert_eq!(res.status.code(), Some(2));
    let err = stderr(&res);
    assert!(err.contains("P = 5") && err.contains("n = 3"), "{err}");

    write(dir.path(), "u.toml", &format!("{CANONICAL}colour = \"red\"\n"));
    let res = fbo(&["print-config", "--config", "u.toml"], dir.path());
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("colour"));

    let res = fbo(&["run"], dir.path());
    assert_eq!(res.status.code(), Some(2));
    let res = fbo(&["frobnicate"], dir.path());
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", &format!("{CANONICAL}sigma = 0.1\nstep_preset = \"cifar_cnn\"\n").replace("eta_y = 0.1\n", ""));
    let first = fbo(&["print-config", "--config", "c.toml"], dir.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    fs::write(dir.path().join("printed.toml"), &first.stdout).unwrap();
    let second = fbo(&["print-config", "--config", "printed.toml"], dir.path());
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("eta_y = 0.1\n"), "{text}");
    assert!(!text.contains("step_preset"));
}

#[test]
fn check_gradients_pass_and_fail() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", CANONICAL);
    let res = fbo(&["check-gradients", "--config", "c.toml"], dir.path());
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let out = String::from_utf8(res.stdout).unwrap();
    assert_eq!(out.matches("PASS").count(), 4, "{out}");
    let fd_line = out.lines().find(|l| l.starts_with("hypergrad_vs_finite_diff")).unwrap();
    let err: f64 = fd_line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err < 1e-6);

    // Finite entries so the file loads, but large enough to overflow the objective.
    let inst = dir.path().join("corrupt.txt");
    write_instance(&inst, &one_d_with_e(1e300)).unwrap();
    write(dir.path(), "bad.toml", &fixture_config(&inst, ""));
    let res = fbo(&["check-gradients", "--config", "bad.toml"], dir.path());
    assert_eq!(res.status.code(), Some(1));
    let out = String::from_utf8(res.stdout).unwrap();
    assert!(out.lines().next().unwrap().ends_with("FAIL"), "{out}");

    // Only A = I nonzero: every gradient vanishes.
    let inst = dir.path().join("trivial.txt");
    let trivial = BilevelInstance::new(vec![1.0], vec![ClientData::trivial(1, 1)]).unwrap();
    write_instance(&inst, &trivial).unwrap();
    write(dir.path(), "triv.toml", &fixture_config(&inst, ""));
    let res = fbo(&["check-gradients", "--config", "triv.toml"], dir.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
}

#[test]
fn sweep_emits_one_csv_per_cell_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let text = "algorithm = \"simfbo\"\nn = 4\nd_x = 2\nd_y = 2\nparticipants = 1\nrounds = 40\nsigma = 0.1\nstep_preset = \"heterogeneous\"\nsweep_param = \"P\"\nsweep_values = [2.0, 4.0]\n";
    write(dir.path(), "s.toml", text);
    let res = fbo(&["sweep", "--config", "s.toml", "--out", "sw", "--quiet"], dir.path());
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let mut names: Vec<String> = fs::read_dir(dir.path().join("sw"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["P_2_seed_0.csv", "P_4_seed_0.csv", "aggregate.csv"]);
    let agg = fs::read_to_string(dir.path().join("sw/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);

    // A value no run can use is reported without aborting the other cells.
    write(dir.path(), "s2.toml", &text.replace("[2.0, 4.0]", "[2.0, 9.0]"));
    let res = fbo(&["sweep", "--config", "s2.toml", "--out", "sw2", "--quiet"], dir.path());
    assert_eq!(res.status.code(), Some(1));
    assert!(dir.path().join("sw2/P_2_seed_0.csv").exists());
    let agg = fs::read_to_string(dir.path().join("sw2/aggregate.csv")).unwrap();
    assert!(agg.lines().nth(2).unwrap().starts_with("9,1,1,"), "{agg}");
}

#[test]
fn worker_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let text = "algorithm = \"shrofbo\"\nn = 6\nd_x = 3\nd_y = 3\nparticipants = 4\nrounds = 60\nsigma = 0.1\ntau_profile = \"uniform\"\ntau_lo = 1\ntau_hi = 6\nstep_preset = \"heterogeneous\"\n";
    write(dir.path(), "w.toml", text);
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = format!("w{workers}");
        let res = Command::new(env!("CARGO_BIN_EXE_fbo"))
            .args(["run", "--config", "w.toml", "--out", &out, "--quiet"])
            .current_dir(dir.path())
            .env("FBO_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
        outputs.push(fs::read(dir.path().join(out).join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let res = Command::new(env!("CARGO_BIN_EXE_fbo"))
        .args(["run", "--config", "w.toml", "--out", "bad"])
        .current_dir(dir.path())
        .env("FBO_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}
