//! Closed-form hypergradient against central differences and the
//! residuals of the lower-level problem and the linear system.

use fedbilevel::oracle::consistency_checks;
use fedbilevel::problem::{make_synthetic_instance, WeightProfile};
use fedbilevel::{InstanceSpec, WeightVector};
use nalgebra::DVector;

fn main() -> fedbilevel::Result<()> {
    let spec = InstanceSpec {
        n: 6,
        d_x: 4,
        d_y: 5,
        mu_g_target: 0.5,
        l1_target: 5.0,
        heterogeneity: 0.8,
        weight_profile: WeightProfile::Random,
    };
    let instance = make_synthetic_instance(&spec, 3)?;
    let x = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
    let weights = WeightVector::of(&instance);

    for check in consistency_checks(&instance, &weights, &x, 1e-4) {
        println!(
            "{:<26} {:.3e} (tolerance {:.0e}) {}",
            check.name,
            check.error,
            check.tolerance,
            if check.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
