//! SimFBO on the one-client, one-dimensional instance whose only
//! stationary point is `x = -2`.

use fedbilevel::runner::InstanceSource;
use fedbilevel::{run, Algorithm, RunConfig, StepSizes};

fn main() -> fedbilevel::Result<()> {
    let mut config = RunConfig::new(
        Algorithm::SimFbo,
        InstanceSource::Canonical1d,
        StepSizes::uniform(0.1, 0.5),
    );
    config.rounds = 300;
    config.metrics_every = 50;

    let report = run(&config)?;
    println!("{:>5} {:>14} {:>14} {:>14}", "t", "|grad Phi|^2", "y gap", "Phi");
    for row in &report.rows {
        println!(
            "{:>5} {:>14.6e} {:>14.6e} {:>14.6e}",
            row.t, row.grad_phi_sq, row.y_gap, row.phi
        );
    }
    println!("final x = {:.10}", report.final_state.x[0]);
    Ok(())
}
