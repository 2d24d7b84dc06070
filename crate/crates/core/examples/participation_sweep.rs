//! Noisy runs over the number of participants per round, 10 seeds each.

use fedbilevel::problem::{make_synthetic_instance, WeightProfile};
use fedbilevel::runner::{sweep, InstanceSource, SweepParam};
use fedbilevel::sampling::TauProfile;
use fedbilevel::{Algorithm, InstanceSpec, NoiseModel, RunConfig, StepSizes};

fn main() -> fedbilevel::Result<()> {
    let spec = InstanceSpec {
        n: 8,
        d_x: 5,
        d_y: 5,
        mu_g_target: 1.0,
        l1_target: 4.0,
        heterogeneity: 0.5,
        weight_profile: WeightProfile::Random,
    };
    let instance = make_synthetic_instance(&spec, 21)?;
    let mut config = RunConfig::new(
        Algorithm::ShroFbo,
        InstanceSource::Synthetic { spec, seed: 21 },
        StepSizes::uniform(0.05, 0.1),
    );
    config.rounds = 300;
    config.tau = TauProfile::Uniform { lo: 1, hi: 4 };
    config.noise = NoiseModel::uniform(0.1);
    config.x0 = Some(vec![1.0; 5]);

    let seeds: Vec<u64> = (0..10).collect();
    let cells = sweep(&instance, &config, SweepParam::Participants, &[1.0, 2.0, 4.0, 8.0], &seeds)?;
    println!("{:>3} {:>12} {:>12} {:>12}", "P", "q1", "median", "q3");
    for cell in &cells {
        if let Some(q) = cell.grad_phitilde_sq {
            println!("{:>3} {:>12.4e} {:>12.4e} {:>12.4e}", cell.value, q.q1, q.median, q.q3);
        }
    }
    Ok(())
}
