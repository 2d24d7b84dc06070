//! Local client rounds, local and server aggregation, normalization,
//! projection and server updates for SimFBO and ShroFBO.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::WeightVector;
use crate::problem::{BilevelInstance, ClipBounds, NoiseModel, NoisyDraws};

/// Server-side update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Raw aggregates `q`, stepped by `γ`.
    SimFbo,
    /// Normalized aggregates `h`, stepped by `ρ·γ`.
    ShroFbo,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::SimFbo => "simfbo",
            Algorithm::ShroFbo => "shrofbo",
        })
    }
}

/// Server iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct FedState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub v: DVector<f64>,
    /// Rounds completed.
    pub t: usize,
    /// Projection radius for `v`.
    pub r: f64,
}

impl FedState {
    pub fn new(x: DVector<f64>, y: DVector<f64>, v: DVector<f64>, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid("radius", format!("must be > 0, got {r}")));
        }
        if y.len() != v.len() {
            return Err(Error::Dimension {
                what: "v",
                expected: y.len(),
                got: v.len(),
            });
        }
        let state = FedState { x, y, v, t: 0, r };
        if !state.is_finite() {
            return Err(Error::invalid("initial state", "entries must be finite"));
        }
        Ok(state)
    }

    pub fn zeros(instance: &BilevelInstance, r: f64) -> Result<Self> {
        FedState::new(
            DVector::zeros(instance.d_x()),
            DVector::zeros(instance.d_y()),
            DVector::zeros(instance.d_y()),
            r,
        )
    }

    pub fn is_finite(&self) -> bool {
        [&self.x, &self.y, &self.v]
            .iter()
            .all(|z| z.iter().all(|c| c.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `a ≡ alpha_max`.
    Constant,
    /// `a_k = max(alpha_max · decay^k, alpha_min)`.
    Geometric,
}

/// Client-specific local coefficients `a_i^{(t,k)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSchedule {
    pub kind: ScheduleKind,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Ratio for the geometric kind, in `(0, 1]`.
    pub decay: f64,
}

impl Default for CoefficientSchedule {
    fn default() -> Self {
        CoefficientSchedule::unit()
    }
}

impl CoefficientSchedule {
    /// `a ≡ 1`, plain local SGD.
    pub fn unit() -> Self {
        CoefficientSchedule {
            kind: ScheduleKind::Constant,
            alpha_min: 1.0,
            alpha_max: 1.0,
            decay: 1.0,
        }
    }

    pub fn geometric(alpha_min: f64, alpha_max: f64, decay: f64) -> Self {
        CoefficientSchedule {
            kind: ScheduleKind::Geometric,
            alpha_min,
            alpha_max,
            decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min.is_finite() && self.alpha_min > 0.0) {
            return Err(Error::invalid(
                "alpha_min",
                format!("must be > 0, got {}", self.alpha_min),
            ));
        }
        if !(self.alpha_max.is_finite() && self.alpha_max >= self.alpha_min) {
            return Err(Error::invalid(
                "alpha_max",
                format!(
                    "must be >= alpha_min ({}), got {}",
                    self.alpha_min, self.alpha_max
                ),
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(
                "decay",
                format!("must lie in (0, 1], got {}", self.decay),
            ));
        }
        Ok(())
    }

    /// Coefficient of local step `k`.
    pub fn coefficient(&self, k: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.alpha_max,
            ScheduleKind::Geometric => {
                let exp = i32::try_from(k).unwrap_or(i32::MAX);
                (self.alpha_max * self.decay.powi(exp)).max(self.alpha_min)
            }
        }
    }

    /// `‖a‖₁` over `tau` local steps.
    pub fn norm1(&self, tau: usize) -> f64 {
        (0..tau).map(|k| self.coefficient(k)).sum()
    }

    /// Bound on local `v` norms relative to the projection radius.
    pub fn local_v_factor(&self) -> f64 {
        1.0 + self.alpha_max / self.alpha_min
    }
}

/// Local (`eta_*`) and server (`gamma_*`) stepsizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta_y: f64,
    pub eta_v: f64,
    pub eta_x: f64,
    pub gamma_y: f64,
    pub gamma_v: f64,
    pub gamma_x: f64,
}

impl StepSizes {
    pub fn uniform(eta: f64, gamma: f64) -> Self {
        StepSizes {
            eta_y: eta,
            eta_v: eta,
            eta_x: eta,
            gamma_y: gamma,
            gamma_v: gamma,
            gamma_x: gamma,
        }
    }

    fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("eta_y", self.eta_y),
            ("eta_v", self.eta_v),
            ("eta_x", self.eta_x),
            ("gamma_y", self.gamma_y),
            ("gamma_v", self.gamma_v),
            ("gamma_x", self.gamma_x),
        ]
    }

    /// Every stepsize finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        for (name, s) in self.entries() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(name, format!("must be >= 0, got {s}")));
            }
        }
        Ok(())
    }

    /// Local stepsizes scaled by `factor`; server stepsizes unchanged.
    pub fn with_local_scale(&self, factor: f64) -> Self {
        StepSizes {
            eta_y: self.eta_y * factor,
            eta_v: self.eta_v * factor,
            eta_x: self.eta_x * factor,
            ..*self
        }
    }
}

/// Aggregates one participant sends back after its local steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientRoundResult {
    pub q_y: DVector<f64>,
    pub q_v: DVector<f64>,
    pub q_x: DVector<f64>,
    /// `‖a_i^{(t)}‖₁`.
    pub a_norm1: f64,
    pub tau: usize,
    pub samples_used: u64,
    /// `max_k ‖v_i^{(t,k)}‖` over `k = 0..=tau`.
    pub max_local_v_norm: f64,
    /// `(1/‖a‖₁) Σ_k a_k ‖v_i^{(t,k)} - v^{(t)}‖²`.
    pub drift_v: f64,
}

impl ClientRoundResult {
    pub fn h_y(&self) -> DVector<f64> {
        &self.q_y / self.a_norm1
    }

    pub fn h_v(&self) -> DVector<f64> {
        &self.q_v / self.a_norm1
    }

    pub fn h_x(&self) -> DVector<f64> {
        &self.q_x / self.a_norm1
    }
}

/// Running `Σ_k a_k · gradient_k` for the three variables.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalAggregator {
    pub q_y: DVector<f64>,
    pub q_v: DVector<f64>,
    pub q_x: DVector<f64>,
    pub a_norm1: f64,
}

impl LocalAggregator {
    pub fn new(d_x: usize, d_y: usize) -> Self {
        LocalAggregator {
            q_y: DVector::zeros(d_y),
            q_v: DVector::zeros(d_y),
            q_x: DVector::zeros(d_x),
            a_norm1: 0.0,
        }
    }

    pub fn push(&mut self, a: f64, g_y: &DVector<f64>, g_v: &DVector<f64>, g_x: &DVector<f64>) {
        self.q_y.axpy(a, g_y, 1.0);
        self.q_v.axpy(a, g_v, 1.0);
        self.q_x.axpy(a, g_x, 1.0);
        self.a_norm1 += a;
    }
}

/// Noise settings for sampled oracles during local rounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalNoise {
    pub model: NoiseModel,
    pub clip: ClipBounds,
    pub seed: u64,
}

fn finite_or(
    z: &DVector<f64>,
    variable: &'static str,
    round: usize,
    client: usize,
    step: usize,
) -> Result<()> {
    if z.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            round,
            variable,
            client: Some(client),
            step: Some(step),
        })
    }
}

/// `tau` simultaneous local steps of client `client` starting from `state`.
///
/// All three gradients are evaluated at the current local iterate before
/// any variable moves. Local `v` is not projected.
pub fn local_round(
    instance: &BilevelInstance,
    client: usize,
    state: &FedState,
    tau: usize,
    sched: &CoefficientSchedule,
    steps: &StepSizes,
    noise: Option<&LocalNoise>,
) -> Result<ClientRoundResult> {
    if tau < 1 {
        return Err(Error::invalid("tau", "must be >= 1"));
    }
    instance.client(client)?;
    let round = state.t;
    let mut x = state.x.clone();
    let mut y = state.y.clone();
    let mut v = state.v.clone();
    let mut agg = LocalAggregator::new(instance.d_x(), instance.d_y());
    let mut max_v = v.norm();
    let mut drift = 0.0;
    for k in 0..tau {
        let mut draws =
            noise.map(|nz| NoisyDraws::new(nz.model, nz.clip, nz.seed, round, client, k));
        let g_y = instance.grad_y_g(client, &x, &y, draws.as_mut())?;
        let g_v = instance.grad_v_r(client, &x, &y, &v, draws.as_mut())?;
        let g_x = instance.local_hypergrad(client, &x, &y, &v, draws.as_mut())?;
        finite_or(&g_y, "grad_y", round, client, k)?;
        finite_or(&g_v, "grad_v", round, client, k)?;
        finite_or(&g_x, "grad_x", round, client, k)?;

        let a = sched.coefficient(k);
        drift += a * (&v - &state.v).norm_squared();
        agg.push(a, &g_y, &g_v, &g_x);
        y.axpy(-a * steps.eta_y, &g_y, 1.0);
        v.axpy(-a * steps.eta_v, &g_v, 1.0);
        x.axpy(-a * steps.eta_x, &g_x, 1.0);
        finite_or(&y, "y", round, client, k)?;
        finite_or(&v, "v", round, client, k)?;
        finite_or(&x, "x", round, client, k)?;
        max_v = max_v.max(v.norm());
    }
    Ok(ClientRoundResult {
        drift_v: drift / agg.a_norm1,
        q_y: agg.q_y,
        q_v: agg.q_v,
        q_x: agg.q_x,
        a_norm1: agg.a_norm1,
        tau,
        samples_used: 3 * tau as u64,
        max_local_v_norm: max_v,
    })
}

/// `min{1, r/‖v‖} v`.
pub fn project_ball(v: &DVector<f64>, r: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= r {
        v.clone()
    } else {
        v * (r / norm)
    }
}

/// `(n/P)·p_i`.
pub fn effective_participation_weight(p_i: f64, participants: usize, n: usize) -> Result<f64> {
    if participants == 0 || participants > n {
        return Err(Error::invalid(
            "participants",
            format!("P must satisfy 1 <= P <= n, got P = {participants}, n = {n}"),
        ));
    }
    Ok(n as f64 / participants as f64 * p_i)
}

/// `ρ = Σ_j p_j ‖a_j‖₁` and `w_i = p_i ‖a_i‖₁ / ρ`.
pub fn reweighted_objective_weights(p: &[f64], a_norm1_all: &[f64]) -> Result<(f64, WeightVector)> {
    if p.len() != a_norm1_all.len() {
        return Err(Error::Dimension {
            what: "a_norm1",
            expected: p.len(),
            got: a_norm1_all.len(),
        });
    }
    if let Some(bad) = a_norm1_all.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(Error::invalid("a_norm1", format!("must be > 0, got {bad}")));
    }
    let rho: f64 = p.iter().zip(a_norm1_all).map(|(pi, ai)| pi * ai).sum();
    let mut w: Vec<f64> = p.iter().zip(a_norm1_all).map(|(pi, ai)| pi * ai / rho).collect();
    // Renormalize so the sum is 1 to round-off.
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= total);
    Ok((rho, WeightVector::new(w)?))
}

fn check_keys(
    results: &BTreeMap<usize, ClientRoundResult>,
    p_tilde: &BTreeMap<usize, f64>,
) -> Result<()> {
    if results.is_empty() {
        return Err(Error::invalid("results", "no participant results"));
    }
    if !results.keys().eq(p_tilde.keys()) {
        return Err(Error::invalid(
            "p_tilde",
            "keys must match the participants that reported results",
        ));
    }
    Ok(())
}

/// `Σ_{i∈C} p̃_i z_i` for a per-client quantity `z`.
fn weighted_sum<F>(
    results: &BTreeMap<usize, ClientRoundResult>,
    p_tilde: &BTreeMap<usize, f64>,
    pick: F,
) -> DVector<f64>
where
    F: Fn(&ClientRoundResult) -> DVector<f64>,
{
    let mut iter = results.iter();
    let (i0, r0) = iter.next().expect("nonempty results");
    let mut acc = pick(r0) * p_tilde[i0];
    for (i, r) in iter {
        acc.axpy(p_tilde[i], &pick(r), 1.0);
    }
    acc
}

/// Server aggregates `(q_y, q_v, q_x)`.
pub fn aggregate_q(
    results: &BTreeMap<usize, ClientRoundResult>,
    p_tilde: &BTreeMap<usize, f64>,
) -> Result<[DVector<f64>; 3]> {
    check_keys(results, p_tilde)?;
    Ok([
        weighted_sum(results, p_tilde, |r| r.q_y.clone()),
        weighted_sum(results, p_tilde, |r| r.q_v.clone()),
        weighted_sum(results, p_tilde, |r| r.q_x.clone()),
    ])
}

/// Server aggregates `(h_y, h_v, h_x)` of normalized client aggregates.
pub fn aggregate_h(
    results: &BTreeMap<usize, ClientRoundResult>,
    p_tilde: &BTreeMap<usize, f64>,
) -> Result<[DVector<f64>; 3]> {
    check_keys(results, p_tilde)?;
    Ok([
        weighted_sum(results, p_tilde, ClientRoundResult::h_y),
        weighted_sum(results, p_tilde, ClientRoundResult::h_v),
        weighted_sum(results, p_tilde, ClientRoundResult::h_x),
    ])
}

fn apply_server_update(
    state: &FedState,
    [d_y, d_v, d_x]: [DVector<f64>; 3],
    scale: f64,
    steps: &StepSizes,
) -> Result<FedState> {
    for (name, d) in [("aggregate y", &d_y), ("aggregate v", &d_v), ("aggregate x", &d_x)] {
        if !d.iter().all(|c| c.is_finite()) {
            return Err(Error::Divergence {
                round: state.t,
                variable: name,
                client: None,
                step: None,
            });
        }
    }
    let next = FedState {
        y: &state.y - d_y * (scale * steps.gamma_y),
        v: project_ball(&(&state.v - d_v * (scale * steps.gamma_v)), state.r),
        x: &state.x - d_x * (scale * steps.gamma_x),
        t: state.t + 1,
        r: state.r,
    };
    if !next.is_finite() {
        return Err(Error::Divergence {
            round: state.t,
            variable: "server iterate",
            client: None,
            step: None,
        });
    }
    Ok(next)
}

/// SimFBO server step: `z ← z - γ_z q_z`, with `v` projected.
pub fn server_step_simfbo(
    state: &FedState,
    results: &BTreeMap<usize, ClientRoundResult>,
    p_tilde: &BTreeMap<usize, f64>,
    steps: &StepSizes,
) -> Result<FedState> {
    apply_server_update(state, aggregate_q(results, p_tilde)?, 1.0, steps)
}

/// ShroFBO server step: `z ← z - ρ γ_z h_z`, with `v` projected.
///
/// Normalized client aggregates are weighted by `p̃_i`, not by the
/// effective objective weights.
pub fn server_step_shrofbo(
    state: &FedState,
    results: &BTreeMap<usize, ClientRoundResult>,
    p_tilde: &BTreeMap<usize, f64>,
    rho: f64,
    steps: &StepSizes,
) -> Result<FedState> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::invalid("rho", format!("must be > 0, got {rho}")));
    }
    apply_server_update(state, aggregate_h(results, p_tilde)?, rho, steps)
}
