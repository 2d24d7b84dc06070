//! Flat TOML run configuration.
//!
//! Every key sits at the top level. Unknown keys are rejected. A minimal
//! file:
//!
//! ```toml
//! algorithm = "simfbo"
//! n = 8
//! d_x = 5
//! d_y = 5
//! participants = 4
//! rounds = 200
//! step_preset = "mnist_mlp"
//! ```
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `algorithm` | `simfbo` or `shrofbo` | required |
//! | `instance` | `synthetic`, `fixture` or `canonical_1d` | `synthetic` |
//! | `instance_path` | instance file, for `instance = "fixture"` | |
//! | `n`, `d_x`, `d_y` | synthetic instance size | required for `synthetic` |
//! | `mu_g`, `l1` | synthetic spectrum range of the lower-level Hessians | `1`, `4` |
//! | `heterogeneity` | `0` identical clients, `1` fully private | `0.5` |
//! | `weight_profile` | `uniform`, `linear`, `random` | `uniform` |
//! | `instance_seed` | seed of the synthetic instance | `0` |
//! | `participants`, `rounds` | `P` and `T` | required |
//! | `tau_profile` | `fixed` (`tau`), `uniform` (`tau_lo`, `tau_hi`), `per_client` (`taus`) | `fixed` |
//! | `schedule` | `constant` or `geometric` with `alpha_min`, `alpha_max`, `decay` | `constant`, all `1` |
//! | `step_preset` | `mnist_mlp`, `cifar_cnn`, `heterogeneous` or `heuristic` (`c_gamma`, `c_eta`) | |
//! | `eta_y` .. `gamma_x` | stepsizes, override the preset | required without a preset |
//! | `local_decay` | local stepsizes scaled by `1/(1 + local_decay·t)` | `0` |
//! | `sigma` or `sigma_f`, `sigma_g`, `sigma_gg` | oracle noise; all zero means exact oracles | `0` |
//! | `lf_cap`, `radius` | gradient cap and projection radius | derived |
//! | `x0`, `y0` | initial point | zeros |
//! | `seed`, `output_dir`, `metrics_every`, `workers` | | `0`, none, `1`, all cores |
//! | `sweep_param`, `sweep_values`, `sweep_seeds` | `P`, `T`, `sigma` or `tau` grid for `fbo sweep` | |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcore::{Algorithm, CoefficientSchedule, ScheduleKind, StepSizes};
use crate::problem::{InstanceSpec, NoiseModel, WeightProfile};
use crate::runner::{heuristic_step_sizes, step_preset, InstanceSource, RunConfig, SweepParam};
use crate::sampling::TauProfile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Synthetic,
    Fixture,
    #[serde(rename = "canonical_1d")]
    Canonical1d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauKind {
    Fixed,
    Uniform,
    PerClient,
}

/// The file as written, before defaults and cross-field checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub algorithm: Option<Algorithm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_profile: Option<WeightProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_seed: Option<u64>,
    pub participants: Option<usize>,
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_profile: Option<TauKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_lo: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_hi: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_gg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lf_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_param: Option<SweepParam>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_seeds: Option<Vec<u64>>,
}

/// Grid for `fbo sweep`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// A validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub run: RunConfig,
    pub sweep: Option<SweepSpec>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::invalid(field, "required"))
}

fn reject_if_set<T>(value: &Option<T>, field: &str, context: &str) -> Result<()> {
    match value {
        Some(_) => Err(Error::invalid(field, format!("not used with {context}"))),
        None => Ok(()),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            reason: e.message().to_string(),
        })?;
        let config = file.resolve()?;
        config.run.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Canonical file form: every resolved value spelled out, no presets.
    pub fn to_file(&self) -> ConfigFile {
        let r = &self.run;
        let mut f = ConfigFile {
            algorithm: Some(r.algorithm),
            participants: Some(r.participants),
            rounds: Some(r.rounds),
            ..ConfigFile::default()
        };
        match &r.instance {
            InstanceSource::Synthetic { spec, seed } => {
                f.instance = Some(InstanceKind::Synthetic);
                f.n = Some(spec.n);
                f.d_x = Some(spec.d_x);
                f.d_y = Some(spec.d_y);
                f.mu_g = Some(spec.mu_g_target);
                f.l1 = Some(spec.l1_target);
                f.heterogeneity = Some(spec.heterogeneity);
                f.weight_profile = Some(spec.weight_profile);
                f.instance_seed = Some(*seed);
            }
            InstanceSource::Fixture { path } => {
                f.instance = Some(InstanceKind::Fixture);
                f.instance_path = Some(path.clone());
            }
            InstanceSource::Canonical1d => f.instance = Some(InstanceKind::Canonical1d),
        }
        match &r.tau {
            TauProfile::Fixed { tau } => {
                f.tau_profile = Some(TauKind::Fixed);
                f.tau = Some(*tau);
            }
            TauProfile::Uniform { lo, hi } => {
                f.tau_profile = Some(TauKind::Uniform);
                f.tau_lo = Some(*lo);
                f.tau_hi = Some(*hi);
            }
            TauProfile::PerClient { taus } => {
                f.tau_profile = Some(TauKind::PerClient);
                f.taus = Some(taus.clone());
            }
        }
        f.schedule = Some(r.schedule.kind);
        f.alpha_min = Some(r.schedule.alpha_min);
        f.alpha_max = Some(r.schedule.alpha_max);
        f.decay = Some(r.schedule.decay);
        f.eta_y = Some(r.steps.eta_y);
        f.eta_v = Some(r.steps.eta_v);
        f.eta_x = Some(r.steps.eta_x);
        f.gamma_y = Some(r.steps.gamma_y);
        f.gamma_v = Some(r.steps.gamma_v);
        f.gamma_x = Some(r.steps.gamma_x);
        f.local_decay = Some(r.local_decay);
        f.sigma_f = Some(r.noise.sigma_f);
        f.sigma_g = Some(r.noise.sigma_g);
        f.sigma_gg = Some(r.noise.sigma_gg);
        f.lf_cap = r.lf_cap;
        f.radius = r.radius;
        f.x0 = r.x0.clone();
        f.y0 = r.y0.clone();
        f.seed = Some(r.seed);
        f.output_dir = r.output_dir.clone();
        f.metrics_every = Some(r.metrics_every);
        f.workers = r.workers;
        if let Some(s) = &self.sweep {
            f.sweep_param = Some(s.param);
            f.sweep_values = Some(s.values.clone());
            f.sweep_seeds = Some(s.seeds.clone());
        }
        f
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes to TOML")
    }
}

impl ConfigFile {
    /// Applies defaults and presets and checks cross-field consistency.
    pub fn resolve(self) -> Result<Config> {
        let algorithm = required(self.algorithm, "algorithm")?;
        let participants = required(self.participants, "participants")?;
        let rounds = required(self.rounds, "rounds")?;

        let kind = self.instance.unwrap_or(InstanceKind::Synthetic);
        let synthetic_keys = [
            ("n", self.n.is_some()),
            ("d_x", self.d_x.is_some()),
            ("d_y", self.d_y.is_some()),
            ("mu_g", self.mu_g.is_some()),
            ("l1", self.l1.is_some()),
            ("heterogeneity", self.heterogeneity.is_some()),
            ("weight_profile", self.weight_profile.is_some()),
            ("instance_seed", self.instance_seed.is_some()),
        ];
        let instance = match kind {
            InstanceKind::Synthetic => {
                reject_if_set(&self.instance_path, "instance_path", "instance = \"synthetic\"")?;
                InstanceSource::Synthetic {
                    spec: InstanceSpec {
                        n: required(self.n, "n")?,
                        d_x: required(self.d_x, "d_x")?,
                        d_y: required(self.d_y, "d_y")?,
                        mu_g_target: self.mu_g.unwrap_or(1.0),
                        l1_target: self.l1.unwrap_or(4.0),
                        heterogeneity: self.heterogeneity.unwrap_or(0.5),
                        weight_profile: self.weight_profile.unwrap_or(WeightProfile::Uniform),
                    },
                    seed: self.instance_seed.unwrap_or(0),
                }
            }
            other => {
                if let Some((key, _)) = synthetic_keys.iter().find(|(_, set)| *set) {
                    return Err(Error::invalid(
                        *key,
                        "only used with instance = \"synthetic\"",
                    ));
                }
                if other == InstanceKind::Fixture {
                    InstanceSource::Fixture {
                        path: required(self.instance_path, "instance_path")?,
                    }
                } else {
                    reject_if_set(&self.instance_path, "instance_path", "instance = \"canonical_1d\"")?;
                    InstanceSource::Canonical1d
                }
            }
        };

        let tau = match self.tau_profile.unwrap_or(TauKind::Fixed) {
            TauKind::Fixed => {
                reject_if_set(&self.tau_lo, "tau_lo", "tau_profile = \"fixed\"")?;
                reject_if_set(&self.tau_hi, "tau_hi", "tau_profile = \"fixed\"")?;
                reject_if_set(&self.taus, "taus", "tau_profile = \"fixed\"")?;
                TauProfile::Fixed {
                    tau: self.tau.unwrap_or(1),
                }
            }
            TauKind::Uniform => {
                reject_if_set(&self.tau, "tau", "tau_profile = \"uniform\"")?;
                reject_if_set(&self.taus, "taus", "tau_profile = \"uniform\"")?;
                TauProfile::Uniform {
                    lo: required(self.tau_lo, "tau_lo")?,
                    hi: required(self.tau_hi, "tau_hi")?,
                }
            }
            TauKind::PerClient => {
                reject_if_set(&self.tau, "tau", "tau_profile = \"per_client\"")?;
                reject_if_set(&self.tau_lo, "tau_lo", "tau_profile = \"per_client\"")?;
                reject_if_set(&self.tau_hi, "tau_hi", "tau_profile = \"per_client\"")?;
                TauProfile::PerClient {
                    taus: required(self.taus, "taus")?,
                }
            }
        };

        let schedule = CoefficientSchedule {
            kind: self.schedule.unwrap_or(ScheduleKind::Constant),
            alpha_min: self.alpha_min.unwrap_or(1.0),
            alpha_max: self.alpha_max.unwrap_or(1.0),
            decay: self.decay.unwrap_or(1.0),
        };

        let base = match self.step_preset.as_deref() {
            None => {
                reject_if_set(&self.c_gamma, "c_gamma", "step_preset = \"heuristic\" only")?;
                reject_if_set(&self.c_eta, "c_eta", "step_preset = \"heuristic\" only")?;
                None
            }
            Some("heuristic") => {
                let n_clients = match &instance {
                    InstanceSource::Synthetic { spec, .. } => spec.n,
                    _ => 1,
                };
                let (mean, sq_mean) = tau_moments(&tau, n_clients);
                Some(heuristic_step_sizes(
                    participants.max(1),
                    mean,
                    sq_mean,
                    rounds.max(1),
                    self.c_gamma.unwrap_or(1.0),
                    self.c_eta.unwrap_or(1.0),
                ))
            }
            Some(name) => {
                reject_if_set(&self.c_gamma, "c_gamma", "step_preset = \"heuristic\" only")?;
                reject_if_set(&self.c_eta, "c_eta", "step_preset = \"heuristic\" only")?;
                Some(step_preset(name).ok_or_else(|| {
                    Error::invalid(
                        "step_preset",
                        format!(
                            "unknown preset `{name}` (expected mnist_mlp, cifar_cnn, heterogeneous or heuristic)"
                        ),
                    )
                })?)
            }
        };
        let step = |value: Option<f64>, field: &str, pick: fn(&StepSizes) -> f64| -> Result<f64> {
            match (value, &base) {
                (Some(v), _) => Ok(v),
                (None, Some(b)) => Ok(pick(b)),
                (None, None) => Err(Error::invalid(field, "required unless step_preset is set")),
            }
        };
        let steps = StepSizes {
            eta_y: step(self.eta_y, "eta_y", |s| s.eta_y)?,
            eta_v: step(self.eta_v, "eta_v", |s| s.eta_v)?,
            eta_x: step(self.eta_x, "eta_x", |s| s.eta_x)?,
            gamma_y: step(self.gamma_y, "gamma_y", |s| s.gamma_y)?,
            gamma_v: step(self.gamma_v, "gamma_v", |s| s.gamma_v)?,
            gamma_x: step(self.gamma_x, "gamma_x", |s| s.gamma_x)?,
        };

        let shared = self.sigma.unwrap_or(0.0);
        if self.sigma.is_some()
            && (self.sigma_f.is_some() || self.sigma_g.is_some() || self.sigma_gg.is_some())
        {
            return Err(Error::invalid(
                "sigma",
                "set either sigma or sigma_f/sigma_g/sigma_gg, not both",
            ));
        }
        let mut noise = NoiseModel {
            sigma_f: self.sigma_f.unwrap_or(shared),
            sigma_g: self.sigma_g.unwrap_or(shared),
            sigma_gg: self.sigma_gg.unwrap_or(shared),
            enabled: false,
        };
        noise.enabled = noise.sigma_f > 0.0 || noise.sigma_g > 0.0 || noise.sigma_gg > 0.0;

        let run = RunConfig {
            algorithm,
            instance,
            participants,
            rounds,
            tau,
            schedule,
            steps,
            local_decay: self.local_decay.unwrap_or(0.0),
            noise,
            lf_cap: self.lf_cap,
            radius: self.radius,
            x0: self.x0,
            y0: self.y0,
            seed: self.seed.unwrap_or(0),
            output_dir: self.output_dir,
            metrics_every: self.metrics_every.unwrap_or(1),
            workers: self.workers,
        };

        let sweep = match (self.sweep_param, self.sweep_values) {
            (None, None) => {
                reject_if_set(&self.sweep_seeds, "sweep_seeds", "no sweep_param")?;
                None
            }
            (Some(param), Some(values)) => {
                if values.is_empty() {
                    return Err(Error::invalid("sweep_values", "must not be empty"));
                }
                let seeds = self.sweep_seeds.unwrap_or_else(|| vec![run.seed]);
                if seeds.is_empty() {
                    return Err(Error::invalid("sweep_seeds", "must not be empty"));
                }
                Some(SweepSpec { param, values, seeds })
            }
            (Some(_), None) => return Err(Error::invalid("sweep_values", "required with sweep_param")),
            (None, Some(_)) => return Err(Error::invalid("sweep_param", "required with sweep_values")),
        };
        Ok(Config { run, sweep })
    }
}

/// Mean of `E[τ_i]` and of `E[τ_i²]` over clients.
fn tau_moments(tau: &TauProfile, n: usize) -> (f64, f64) {
    let n = match tau {
        TauProfile::PerClient { taus } => taus.len().max(1),
        _ => n.max(1),
    };
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..n {
        for (t, prob) in tau.support(i) {
            m1 += prob * t as f64;
            m2 += prob * (t * t) as f64;
        }
    }
    (m1 / n as f64, m2 / n as f64)
}
