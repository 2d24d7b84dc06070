//! Exact reference computations: closed-form minimizers, true
//! hypergradients, finite differences and brute-force expectations.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::problem::BilevelInstance;

/// Largest condition number accepted by the SPD solver.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Largest client count [`expected_aggregate_brute`] will enumerate.
pub const ENUMERATION_LIMIT: usize = 12;

/// Nonnegative weights over clients summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weights", "empty weight vector"));
        }
        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid("weights", format!("entries must be >= 0, got {bad}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("must sum to 1, got {total}")));
        }
        Ok(WeightVector(w))
    }

    /// The instance's own weights `p`.
    pub fn of(instance: &BilevelInstance) -> Self {
        WeightVector(instance.weights().to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(min_i n·w_i, max_i n·w_i)`.
    pub fn beta_range(&self) -> (f64, f64) {
        let n = self.0.len() as f64;
        self.0
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| {
                (lo.min(n * w), hi.max(n * w))
            })
    }
}

fn check_weights(instance: &BilevelInstance, w: &WeightVector) -> Result<()> {
    if w.len() != instance.n() {
        return Err(Error::Dimension {
            what: "weights",
            expected: instance.n(),
            got: w.len(),
        });
    }
    Ok(())
}

fn check_x(instance: &BilevelInstance, x: &DVector<f64>) -> Result<()> {
    if x.len() != instance.d_x() {
        return Err(Error::Dimension {
            what: "x",
            expected: instance.d_x(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Solves `h z = rhs` for SPD `h` after a condition-number check.
pub fn spd_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(h.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::Singular { condition });
    }
    let chol = h.clone().cholesky().ok_or(Error::Singular { condition })?;
    Ok(chol.solve(rhs))
}

/// `Σ w_i A_i`.
pub fn weighted_hessian(instance: &BilevelInstance, w: &WeightVector) -> DMatrix<f64> {
    let d = instance.d_y();
    instance
        .clients()
        .iter()
        .zip(w.as_slice())
        .fold(DMatrix::zeros(d, d), |acc, (cl, wi)| acc + &cl.a * *wi)
}

/// Minimizer of `Σ w_i g_i(x, ·)`.
pub fn ystar(instance: &BilevelInstance, w: &WeightVector, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_weights(instance, w)?;
    check_x(instance, x)?;
    let rhs = instance
        .clients()
        .iter()
        .zip(w.as_slice())
        .fold(DVector::zeros(instance.d_y()), |acc, (cl, wi)| {
            acc + (cl.b.tr_mul(x) + &cl.c) * *wi
        });
    Ok(-spd_solve(&weighted_hessian(instance, w), &rhs)?)
}

/// `Σ w_i D_i (y - y_ref_i)`, the weighted `∇_y F`.
fn weighted_grad_y_f(instance: &BilevelInstance, w: &WeightVector, y: &DVector<f64>) -> DVector<f64> {
    instance
        .clients()
        .iter()
        .zip(w.as_slice())
        .fold(DVector::zeros(instance.d_y()), |acc, (cl, wi)| {
            acc + &cl.d * (y - &cl.y_ref) * *wi
        })
}

/// Solution of the weighted linear system `(Σ w_i A_i) v = ∇_y F(x, y*)`.
pub fn vstar(instance: &BilevelInstance, w: &WeightVector, x: &DVector<f64>) -> Result<DVector<f64>> {
    let y = ystar(instance, w, x)?;
    spd_solve(&weighted_hessian(instance, w), &weighted_grad_y_f(instance, w, &y))
}

/// Surrogate `Σ w_i (∇_x f_i - B_i v)` at an arbitrary `(x, y, v)`.
pub fn surrogate_hypergrad(
    instance: &BilevelInstance,
    w: &WeightVector,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_weights(instance, w)?;
    check_x(instance, x)?;
    Ok(instance
        .clients()
        .iter()
        .zip(w.as_slice())
        .fold(DVector::zeros(instance.d_x()), |acc, (cl, wi)| {
            acc + (&cl.e * (x - &cl.x_ref) - &cl.b * v) * *wi
        }))
}

/// True hypergradient of `Φ_w(x) = Σ w_i f_i(x, y*_w(x))`.
pub fn hypergrad_exact(
    instance: &BilevelInstance,
    w: &WeightVector,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let v = vstar(instance, w, x)?;
    surrogate_hypergrad(instance, w, x, &v)
}

/// `Φ_w(x)`.
pub fn phi_value(instance: &BilevelInstance, w: &WeightVector, x: &DVector<f64>) -> Result<f64> {
    let y = ystar(instance, w, x)?;
    let mut total = 0.0;
    for (i, wi) in w.as_slice().iter().enumerate() {
        total += wi * instance.f_value(i, x, &y)?;
    }
    Ok(total)
}

/// Central differences of [`phi_value`] with step `h`.
pub fn finite_diff_hypergrad(
    instance: &BilevelInstance,
    w: &WeightVector,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("h", format!("must be > 0, got {h}")));
    }
    check_x(instance, x)?;
    let mut g = DVector::zeros(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        g[j] = (phi_value(instance, w, &xp)? - phi_value(instance, w, &xm)?) / (2.0 * h);
    }
    Ok(g)
}

/// `‖Σ w_i ∇_y g_i(x, y)‖`.
pub fn lower_level_residual(
    instance: &BilevelInstance,
    w: &WeightVector,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    let mut r = DVector::zeros(instance.d_y());
    for (i, wi) in w.as_slice().iter().enumerate() {
        r += instance.grad_y_g(i, x, y, None)? * *wi;
    }
    Ok(r.norm())
}

/// `‖Σ w_i (A_i v - D_i (y - y_ref_i))‖`.
pub fn linear_system_residual(
    instance: &BilevelInstance,
    w: &WeightVector,
    x: &DVector<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    let mut r = DVector::zeros(instance.d_y());
    for (i, wi) in w.as_slice().iter().enumerate() {
        r += instance.grad_v_r(i, x, y, v, None)? * *wi;
    }
    Ok(r.norm())
}

/// Expected partial-participation aggregate by enumerating every subset.
///
/// Averages `Σ_{i∈C} (n/P) p_i c_i` over all `C(n, P)` subsets `C`.
pub fn expected_aggregate_brute(
    contributions: &[DVector<f64>],
    p: &[f64],
    participants: usize,
) -> Result<DVector<f64>> {
    let n = contributions.len();
    if n == 0 || p.len() != n {
        return Err(Error::Dimension {
            what: "weights",
            expected: n,
            got: p.len(),
        });
    }
    if n > ENUMERATION_LIMIT {
        return Err(Error::invalid(
            "n",
            format!("enumeration limited to n <= {ENUMERATION_LIMIT}, got {n}"),
        ));
    }
    if participants == 0 || participants > n {
        return Err(Error::invalid(
            "participants",
            format!("P must satisfy 1 <= P <= n, got P = {participants}, n = {n}"),
        ));
    }
    let d = contributions[0].len();
    let scale = n as f64 / participants as f64;
    let mut sum = DVector::zeros(d);
    let mut count = 0usize;
    for subset in (0..n).combinations(participants) {
        for i in subset {
            sum += &contributions[i] * (scale * p[i]);
        }
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Outcome of one numerical consistency check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Consistency suite at one point `x` with weights `w`.
///
/// Compares the closed-form hypergradient with finite differences and with
/// the surrogate at `(y*, v*)`, and checks the lower-level and
/// linear-system residuals. Any error from the solver is reported as a
/// failed check with an infinite error.
pub fn consistency_checks(
    instance: &BilevelInstance,
    w: &WeightVector,
    x: &DVector<f64>,
    fd_step: f64,
) -> Vec<CheckOutcome> {
    let outcome = |name: &str, tolerance: f64, error: Result<f64>| CheckOutcome {
        name: name.to_string(),
        error: error.ok().filter(|e| !e.is_nan()).unwrap_or(f64::INFINITY),
        tolerance,
    };
    let exact = hypergrad_exact(instance, w, x);
    let fd = (|| -> Result<f64> {
        let fd = finite_diff_hypergrad(instance, w, x, fd_step)?;
        Ok(rel_err(&fd, exact.as_ref().map_err(|e| Error::invalid("hypergrad", e.to_string()))?))
    })();
    let surrogate = (|| -> Result<f64> {
        let v = vstar(instance, w, x)?;
        let s = surrogate_hypergrad(instance, w, x, &v)?;
        let reference = exact.as_ref().map_err(|e| Error::invalid("hypergrad", e.to_string()))?;
        Ok(rel_err(&s, reference))
    })();
    let ll = (|| -> Result<f64> {
        let y = ystar(instance, w, x)?;
        lower_level_residual(instance, w, x, &y)
    })();
    let ls = (|| -> Result<f64> {
        let y = ystar(instance, w, x)?;
        let v = vstar(instance, w, x)?;
        linear_system_residual(instance, w, x, &y, &v)
    })();
    vec![
        outcome("hypergrad_vs_finite_diff", 1e-6, fd),
        outcome("surrogate_at_solution", 1e-10, surrogate),
        outcome("lower_level_stationarity", 1e-10, ll),
        outcome("linear_system_residual", 1e-10, ls),
    ]
}
