//! Saves a synthetic instance to a text file and runs it from a TOML
//! configuration that points at the file.

use fedbilevel::config::Config;
use fedbilevel::fixture::{read_instance, write_instance};
use fedbilevel::problem::{make_synthetic_instance, WeightProfile};
use fedbilevel::runner::{run_on, write_metrics_csv};
use fedbilevel::InstanceSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("fbo-instance-fixture");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("instance.txt");

    let spec = InstanceSpec {
        n: 3,
        d_x: 2,
        d_y: 2,
        mu_g_target: 1.0,
        l1_target: 3.0,
        heterogeneity: 0.5,
        weight_profile: WeightProfile::Linear,
    };
    let instance = make_synthetic_instance(&spec, 8)?;
    write_instance(&path, &instance)?;
    assert_eq!(read_instance(&path)?, instance);

    let text = format!(
        r#"
algorithm = "shrofbo"
instance = "fixture"
instance_path = {path:?}
participants = 2
rounds = 100
metrics_every = 25
tau_profile = "uniform"
tau_lo = 1
tau_hi = 5
step_preset = "cifar_cnn"
sigma = 0.05
seed = 4
"#,
        path = path.to_str().ok_or("non-UTF-8 temp path")?
    );
    let config = Config::from_toml(&text, "inline.toml".as_ref())?;
    println!("{}", config.to_toml());

    let loaded = config.run.instance.load()?;
    let report = run_on(&loaded, &config.run, |_| {})?;
    write_metrics_csv(std::io::stdout().lock(), &report.rows)?;
    Ok(())
}
