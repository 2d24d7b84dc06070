//! The communication-round loop, per-round diagnostics against the exact
//! oracle, metrics output and parameter sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcore::{
    effective_participation_weight, local_round, reweighted_objective_weights,
    server_step_shrofbo, server_step_simfbo, Algorithm, ClientRoundResult, CoefficientSchedule,
    FedState, LocalNoise, StepSizes,
};
use crate::fixture;
use crate::oracle::{hypergrad_exact, phi_value, vstar, ystar, WeightVector};
use crate::problem::{
    make_synthetic_instance, BilevelInstance, InstanceSpec, NoiseModel, SmoothnessConstants,
};
use crate::sampling::{plan_round, TauProfile};

/// Column names of the metrics CSV.
pub const METRICS_HEADER: &str =
    "t,samples,grad_phi_sq,grad_phitilde_sq,y_gap,v_gap,phi,max_local_v_norm,client_drift_v";

/// Where the problem instance comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum InstanceSource {
    /// [`make_synthetic_instance`] with its own seed.
    Synthetic { spec: InstanceSpec, seed: u64 },
    /// An instance file.
    Fixture { path: PathBuf },
    /// [`BilevelInstance::canonical_1d`].
    Canonical1d,
}

impl InstanceSource {
    pub fn load(&self) -> Result<BilevelInstance> {
        match self {
            InstanceSource::Synthetic { spec, seed } => make_synthetic_instance(spec, *seed),
            InstanceSource::Fixture { path } => fixture::read_instance(path),
            InstanceSource::Canonical1d => Ok(BilevelInstance::canonical_1d()),
        }
    }
}

/// Everything a run needs besides the instance data itself.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub instance: InstanceSource,
    /// Participants per round, `P`.
    pub participants: usize,
    /// Communication rounds, `T`.
    pub rounds: usize,
    pub tau: TauProfile,
    pub schedule: CoefficientSchedule,
    pub steps: StepSizes,
    /// Local stepsizes in round `t` are scaled by `1 / (1 + local_decay·t)`.
    pub local_decay: f64,
    pub noise: NoiseModel,
    /// Norm cap on sampled `∇_y f`; `None` means `10·‖∇_y F(x⁰, y⁰)‖`.
    pub lf_cap: Option<f64>,
    /// Projection radius; `None` means `lf_cap / μ_g`.
    pub radius: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// A metrics row is recorded every this many rounds (and at the end).
    pub metrics_every: usize,
    /// Worker threads for local rounds; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Defaults for everything except the instance and stepsizes.
    pub fn new(algorithm: Algorithm, instance: InstanceSource, steps: StepSizes) -> Self {
        RunConfig {
            algorithm,
            instance,
            participants: 1,
            rounds: 100,
            tau: TauProfile::Fixed { tau: 1 },
            schedule: CoefficientSchedule::unit(),
            steps,
            local_decay: 0.0,
            noise: NoiseModel::off(),
            lf_cap: None,
            radius: None,
            x0: None,
            y0: None,
            seed: 0,
            output_dir: None,
            metrics_every: 1,
            workers: None,
        }
    }

    /// Checks every field that does not depend on the instance data.
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::invalid("rounds", "T must be >= 1"));
        }
        if self.participants < 1 {
            return Err(Error::invalid("participants", "P must be >= 1"));
        }
        if let InstanceSource::Synthetic { spec, .. } = &self.instance {
            spec.validate()?;
            if self.participants > spec.n {
                return Err(Error::invalid(
                    "participants",
                    format!("P = {} exceeds n = {}", self.participants, spec.n),
                ));
            }
            self.tau.validate(spec.n)?;
        }
        self.schedule.validate()?;
        self.steps.validate()?;
        self.noise.validate()?;
        if !(self.local_decay.is_finite() && self.local_decay >= 0.0) {
            return Err(Error::invalid("local_decay", "must be >= 0"));
        }
        for (name, val) in [("lf_cap", self.lf_cap), ("radius", self.radius)] {
            if let Some(v) = val {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(name, format!("must be > 0, got {v}")));
                }
            }
        }
        if self.metrics_every < 1 {
            return Err(Error::invalid("metrics_every", "must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers", "must be >= 1"));
        }
        Ok(())
    }

    /// Checks that depend on the loaded instance.
    pub fn validate_for(&self, instance: &BilevelInstance) -> Result<()> {
        self.validate()?;
        let n = instance.n();
        if self.participants > n {
            return Err(Error::invalid(
                "participants",
                format!("P = {} exceeds n = {n}", self.participants),
            ));
        }
        self.tau.validate(n)?;
        for (name, init, dim) in [
            ("x0", &self.x0, instance.d_x()),
            ("y0", &self.y0, instance.d_y()),
        ] {
            if let Some(z) = init {
                if z.len() != dim {
                    return Err(Error::invalid(
                        name,
                        format!("expected {dim} entries, got {}", z.len()),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Stepsize scaling `γ ∝ sqrt(P / (τ̄ T))`, `η ∝ 1 / sqrt(τ̄ (τ̄ + τ̄₂) T)`,
/// where `τ̄` and `τ̄₂` are the weighted mean step count and mean squared
/// step count. All three server stepsizes share `c_gamma`, all three local
/// ones share `c_eta`.
pub fn heuristic_step_sizes(
    participants: usize,
    tau_mean: f64,
    tau_sq_mean: f64,
    rounds: usize,
    c_gamma: f64,
    c_eta: f64,
) -> StepSizes {
    let t = rounds as f64;
    let gamma = c_gamma * (participants as f64 / (tau_mean * t)).sqrt();
    let eta = c_eta / (tau_mean * (tau_mean + tau_sq_mean) * t).sqrt();
    StepSizes::uniform(eta, gamma)
}

/// Named stepsize triples `[y, v, x]`, applied to local and server steps alike.
pub fn step_preset(name: &str) -> Option<StepSizes> {
    let (y, v, x) = match name {
        "mnist_mlp" => (0.2, 0.1, 0.05),
        "cifar_cnn" => (0.1, 0.05, 0.03),
        "heterogeneous" => (0.03, 0.02, 0.01),
        _ => return None,
    };
    Some(StepSizes {
        eta_y: y,
        eta_v: v,
        eta_x: x,
        gamma_y: y,
        gamma_v: v,
        gamma_x: x,
    })
}

/// Diagnostics of the server iterate after `t` rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub t: usize,
    /// Cumulative oracle draws over all participants.
    pub samples: u64,
    /// Cumulative communication rounds.
    pub rounds: usize,
    /// `‖∇Φ(x)‖²` with weights `p`.
    pub grad_phi_sq: f64,
    /// `‖∇Φ̃(x)‖²` with the effective weights `w`.
    pub grad_phitilde_sq: f64,
    /// `‖y - ỹ*(x)‖²`.
    pub y_gap: f64,
    /// `‖v - ṽ*(x)‖²`.
    pub v_gap: f64,
    /// `Φ(x)` with weights `p`.
    pub phi: f64,
    /// Largest local `‖v‖` in the round that produced this iterate.
    pub max_local_v_norm: f64,
    /// Mean over participants of the coefficient-weighted local `v` drift.
    pub client_drift_v: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.t,
            self.samples,
            self.grad_phi_sq,
            self.grad_phitilde_sq,
            self.y_gap,
            self.v_gap,
            self.phi,
            self.max_local_v_norm,
            self.client_drift_v
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

/// Outcome of a completed run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub final_state: FedState,
    pub rows: Vec<MetricsRow>,
    pub min_grad_phi_sq: f64,
    pub min_grad_phitilde_sq: f64,
    pub wall_time: Duration,
    /// Effective objective weights used for the `Φ̃` metrics.
    pub objective_weights: WeightVector,
    /// How `objective_weights` were obtained.
    pub weights_note: String,
    pub constants: SmoothnessConstants,
    /// Server iterates with `‖v‖ > r`.
    pub projection_violations: usize,
    /// Local iterates with `‖v_i‖ > (1 + α_max/α_min) r`.
    pub local_v_violations: usize,
}

/// Running minimum of `f(row)` over the rows.
pub fn running_min<F: Fn(&MetricsRow) -> f64>(rows: &[MetricsRow], f: F) -> Vec<f64> {
    rows.iter()
        .scan(f64::INFINITY, |m, r| {
            *m = m.min(f(r));
            Some(*m)
        })
        .collect()
}

/// Effective weights for `Φ̃`: exact for deterministic step counts,
/// based on the expected `‖a_i‖₁` for random ones.
pub fn objective_weights(
    instance: &BilevelInstance,
    tau: &TauProfile,
    schedule: &CoefficientSchedule,
) -> Result<(WeightVector, String)> {
    let expected_norm: Vec<f64> = (0..instance.n())
        .map(|i| {
            tau.support(i)
                .into_iter()
                .map(|(t, prob)| prob * schedule.norm1(t))
                .sum()
        })
        .collect();
    let (_, w) = reweighted_objective_weights(instance.weights(), &expected_norm)?;
    let note = if tau.is_random() {
        "w from expected ||a_i||_1 under the random step-count profile"
    } else {
        "w from the fixed per-client ||a_i||_1"
    };
    Ok((w, note.to_string()))
}

fn metrics_row(
    instance: &BilevelInstance,
    p: &WeightVector,
    w: &WeightVector,
    state: &FedState,
    samples: u64,
    local: (f64, f64),
) -> Result<MetricsRow> {
    let x = &state.x;
    let g = hypergrad_exact(instance, p, x)?;
    let gt = hypergrad_exact(instance, w, x)?;
    let yt = ystar(instance, w, x)?;
    let vt = vstar(instance, w, x)?;
    Ok(MetricsRow {
        t: state.t,
        samples,
        rounds: state.t,
        grad_phi_sq: g.norm_squared(),
        grad_phitilde_sq: gt.norm_squared(),
        y_gap: (&state.y - yt).norm_squared(),
        v_gap: (&state.v - vt).norm_squared(),
        phi: phi_value(instance, p, x)?,
        max_local_v_norm: local.0,
        client_drift_v: local.1,
    })
}

/// Default `Lf_cap = 10·‖∇_y F(x⁰, y⁰)‖`, or 1 if that gradient vanishes.
pub fn default_lf_cap(instance: &BilevelInstance, x0: &DVector<f64>, y0: &DVector<f64>) -> Result<f64> {
    let mut g = DVector::zeros(instance.d_y());
    for (i, pi) in instance.weights().iter().enumerate() {
        g += instance.grad_y_f(i, x0, y0, None)? * *pi;
    }
    let cap = 10.0 * g.norm();
    Ok(if cap > 0.0 { cap } else { 1.0 })
}

/// Loads the configured instance and runs it.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let instance = config.instance.load()?;
    run_on(&instance, config, |_| {})
}

/// Runs `config.rounds` rounds on `instance`, passing each metrics row to
/// `observe` as soon as it is computed.
pub fn run_on<F: FnMut(&MetricsRow)>(
    instance: &BilevelInstance,
    config: &RunConfig,
    mut observe: F,
) -> Result<RunReport> {
    config.validate_for(instance)?;
    let started = Instant::now();
    let n = instance.n();
    let x0 = config
        .x0
        .as_ref()
        .map(|x| DVector::from_column_slice(x))
        .unwrap_or_else(|| DVector::zeros(instance.d_x()));
    let y0 = config
        .y0
        .as_ref()
        .map(|y| DVector::from_column_slice(y))
        .unwrap_or_else(|| DVector::zeros(instance.d_y()));
    let lf_cap = match config.lf_cap {
        Some(c) => c,
        None => default_lf_cap(instance, &x0, &y0)?,
    };
    let constants = SmoothnessConstants::of(instance, lf_cap)?;
    let r = config.radius.unwrap_or_else(|| constants.radius());
    let mut state = FedState::new(x0, y0.clone(), DVector::zeros(instance.d_y()), r)?;
    let p = WeightVector::of(instance);
    let (w, weights_note) = objective_weights(instance, &config.tau, &config.schedule)?;
    let noise = config.noise.enabled.then_some(LocalNoise {
        model: config.noise,
        clip: constants.clip_bounds(),
        seed: config.seed,
    });
    let local_bound = config.schedule.local_v_factor() * r;
    let pool = match config.workers {
        Some(k) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?,
        ),
        None => None,
    };

    let mut rows = Vec::new();
    let mut samples = 0u64;
    let mut projection_violations = 0usize;
    let mut local_v_violations = 0usize;
    let first = metrics_row(instance, &p, &w, &state, 0, (state.v.norm(), 0.0))?;
    observe(&first);
    rows.push(first);

    for t in 0..config.rounds {
        let plan = plan_round(n, config.participants, t, &config.tau, config.seed)?;
        let steps = config
            .steps
            .with_local_scale(1.0 / (1.0 + config.local_decay * t as f64));
        let work = || -> Vec<Result<(usize, ClientRoundResult)>> {
            plan.selected
                .par_iter()
                .map(|&i| {
                    local_round(
                        instance,
                        i,
                        &state,
                        plan.taus[i],
                        &config.schedule,
                        &steps,
                        noise.as_ref(),
                    )
                    .map(|res| (i, res))
                })
                .collect()
        };
        let outcomes = match &pool {
            Some(pool) => pool.install(work),
            None => work(),
        };
        let results: BTreeMap<usize, ClientRoundResult> = outcomes
            .into_iter()
            .collect::<Result<_>>()
            .map_err(|e| e.at_round(t))?;
        let mut p_tilde = BTreeMap::new();
        for &i in &plan.selected {
            p_tilde.insert(
                i,
                effective_participation_weight(p.as_slice()[i], config.participants, n)?,
            );
        }

        let mut max_local: f64 = 0.0;
        let mut drift = 0.0;
        for res in results.values() {
            samples += res.samples_used;
            max_local = max_local.max(res.max_local_v_norm);
            drift += res.drift_v;
            if res.max_local_v_norm > local_bound * (1.0 + 1e-12) {
                local_v_violations += 1;
            }
        }
        drift /= results.len() as f64;

        state = match config.algorithm {
            Algorithm::SimFbo => server_step_simfbo(&state, &results, &p_tilde, &steps),
            Algorithm::ShroFbo => {
                let a_norms: Vec<f64> =
                    plan.taus.iter().map(|&tau| config.schedule.norm1(tau)).collect();
                let (rho, _) = reweighted_objective_weights(p.as_slice(), &a_norms)?;
                server_step_shrofbo(&state, &results, &p_tilde, rho, &steps)
            }
        }
        .map_err(|e| e.at_round(t))?;
        if state.v.norm() > state.r * (1.0 + 1e-12) {
            projection_violations += 1;
        }

        if state.t % config.metrics_every == 0 || state.t == config.rounds {
            let row = metrics_row(instance, &p, &w, &state, samples, (max_local, drift))?;
            if !row_is_finite(&row) {
                return Err(Error::Divergence {
                    round: t,
                    variable: "metrics",
                    client: None,
                    step: None,
                });
            }
            observe(&row);
            rows.push(row);
        }
    }

    let min_of = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    Ok(RunReport {
        min_grad_phi_sq: min_of(|r| r.grad_phi_sq),
        min_grad_phitilde_sq: min_of(|r| r.grad_phitilde_sq),
        final_state: state,
        rows,
        wall_time: started.elapsed(),
        objective_weights: w,
        weights_note,
        constants,
        projection_violations,
        local_v_violations,
    })
}

fn row_is_finite(row: &MetricsRow) -> bool {
    [
        row.grad_phi_sq,
        row.grad_phitilde_sq,
        row.y_gap,
        row.v_gap,
        row.phi,
        row.max_local_v_norm,
        row.client_drift_v,
    ]
    .iter()
    .all(|v| v.is_finite())
}

/// Parameter varied by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Participants per round.
    #[serde(rename = "P")]
    Participants,
    /// Number of rounds.
    #[serde(rename = "T")]
    Rounds,
    /// Common noise level for all three oracles.
    Sigma,
    /// Fixed local step count.
    Tau,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Participants => "P",
            SweepParam::Rounds => "T",
            SweepParam::Sigma => "sigma",
            SweepParam::Tau => "tau",
        })
    }
}

/// Median and quartiles of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    /// Linear-interpolation quartiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quartiles {
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
        })
    }
}

/// All runs for one parameter value.
#[derive(Debug)]
pub struct SweepCell {
    pub value: f64,
    pub runs: Vec<(u64, std::result::Result<RunReport, String>)>,
    pub grad_phi_sq: Option<Quartiles>,
    pub grad_phitilde_sq: Option<Quartiles>,
}

impl SweepCell {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|(_, r)| r.is_err()).count()
    }
}

/// `base` with `param` set to `value`.
pub fn with_param(base: &RunConfig, param: SweepParam, value: f64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let as_count = |name: &str| -> Result<usize> {
        if value >= 1.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(Error::invalid(name, format!("sweep value must be a positive integer, got {value}")))
        }
    };
    match param {
        SweepParam::Participants => cfg.participants = as_count("participants")?,
        SweepParam::Rounds => cfg.rounds = as_count("rounds")?,
        SweepParam::Tau => cfg.tau = TauProfile::Fixed { tau: as_count("tau")? },
        SweepParam::Sigma => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid("sigma", format!("must be >= 0, got {value}")));
            }
            cfg.noise = NoiseModel {
                enabled: value > 0.0,
                ..NoiseModel::uniform(value)
            };
        }
    }
    Ok(cfg)
}

/// Grid of runs over `values × seeds` on one instance.
///
/// Failed runs are recorded in their cell and do not stop the sweep.
pub fn sweep(
    instance: &BilevelInstance,
    base: &RunConfig,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep_values", "must not be empty"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("sweep_seeds", "must not be empty"));
    }
    let mut cells = Vec::with_capacity(values.len());
    for &value in values {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let outcome = with_param(base, param, value).and_then(|mut cfg| {
                cfg.seed = seed;
                run_on(instance, &cfg, |_| {})
            });
            runs.push((seed, outcome.map_err(|e| e.to_string())));
        }
        let ok: Vec<&RunReport> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
        let phi: Vec<f64> = ok.iter().map(|r| r.min_grad_phi_sq).collect();
        let phit: Vec<f64> = ok.iter().map(|r| r.min_grad_phitilde_sq).collect();
        cells.push(SweepCell {
            value,
            grad_phi_sq: Quartiles::of(&phi),
            grad_phitilde_sq: Quartiles::of(&phit),
            runs,
        });
    }
    Ok(cells)
}
