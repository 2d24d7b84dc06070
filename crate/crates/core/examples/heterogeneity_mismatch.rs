//! Two clients with equal weights but 1 and 5 local steps.
//!
//! SimFBO weights each client by how many steps it runs and settles at the
//! stationary point of the reweighted objective. ShroFBO normalizes the
//! client updates and reaches the stationary point of the original one.

use fedbilevel::problem::ClientData;
use fedbilevel::runner::{objective_weights, run_on, InstanceSource};
use fedbilevel::sampling::TauProfile;
use fedbilevel::{Algorithm, BilevelInstance, RunConfig, StepSizes};
use nalgebra::{DMatrix, DVector};

fn client(x_ref: f64) -> ClientData {
    ClientData {
        a: DMatrix::from_element(1, 1, 2.0),
        b: DMatrix::from_element(1, 1, 1.0),
        c: DVector::from_element(1, 0.0),
        d: DMatrix::from_element(1, 1, 1.0),
        y_ref: DVector::from_element(1, 1.0),
        e: DMatrix::from_element(1, 1, 1.0),
        x_ref: DVector::from_element(1, x_ref),
    }
}

fn main() -> fedbilevel::Result<()> {
    let instance = BilevelInstance::new(vec![0.5, 0.5], vec![client(2.0), client(-2.0)])?;
    let mut config = RunConfig::new(
        Algorithm::SimFbo,
        InstanceSource::Canonical1d,
        StepSizes::uniform(1e-3, 0.1),
    );
    config.participants = 2;
    config.rounds = 2000;
    config.tau = TauProfile::PerClient { taus: vec![1, 5] };

    let (w, _) = objective_weights(&instance, &config.tau, &config.schedule)?;
    println!("client weights p = {:?}, effective weights w = {:?}", instance.weights(), w.as_slice());

    for algorithm in [Algorithm::SimFbo, Algorithm::ShroFbo] {
        config.algorithm = algorithm;
        let report = run_on(&instance, &config, |_| {})?;
        let x = &report.final_state.x;
        let last = report.rows.last().expect("at least one row");
        println!(
            "{algorithm}: x = {:+.6}, |grad Phi|^2 = {:.3e}, |grad Phi~|^2 = {:.3e}",
            x[0], last.grad_phi_sq, last.grad_phitilde_sq
        );
    }
    Ok(())
}
