//! Federated bilevel optimization on synthetic quadratic problems.
//!
//! The crate implements the SimFBO and ShroFBO algorithms (simultaneous
//! local updates of the lower-level variable `y`, the linear-system
//! auxiliary `v` and the upper-level variable `x`, followed by a
//! generalized server step) on a family of strongly convex quadratic
//! bilevel problems. Exact closed-form oracles make every quantity the
//! algorithms approximate directly checkable.
//!
//! Modules:
//!
//! * [`problem`]: instances and the stochastic oracles clients call.
//! * [`oracle`]: exact minimizers, hypergradients and brute-force checks.
//! * [`sampling`]: participant selection, local step counts, RNG streams.
//! * [`fedcore`]: local rounds, aggregation and server updates.
//! * [`runner`]: the round loop, metrics and parameter sweeps.
//! * [`config`], [`fixture`]: run configuration and instance files.
//! * [`cli`]: the `fbo` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod fedcore;
pub mod fixture;
pub mod oracle;
pub mod problem;
pub mod runner;
pub mod sampling;

pub use error::{Error, Result};
pub use fedcore::{Algorithm, CoefficientSchedule, FedState, StepSizes};
pub use oracle::WeightVector;
pub use problem::{BilevelInstance, InstanceSpec, NoiseModel};
pub use runner::{run, RunConfig, RunReport};
