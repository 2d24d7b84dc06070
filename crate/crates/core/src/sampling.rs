//! Client participation and reproducible random streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(seed, round, client, purpose, step)`. Streams are ChaCha8 generators
//! whose 256-bit key is derived from the tuple, so a draw never depends on
//! the order in which clients are scheduled.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Namespace of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Noise on lower-level gradients.
    GNoise,
    /// Noise on upper-level gradients.
    FNoise,
    /// Noise on second-order derivatives.
    HessNoise,
    /// Participant selection.
    Sampling,
    /// Local step-count assignment.
    Tau,
    /// Synthetic instance generation.
    Instance,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::GNoise => 0x676e6f697365,
            Purpose::FNoise => 0x666e6f697365,
            Purpose::HessNoise => 0x686573736e,
            Purpose::Sampling => 0x73616d706c65,
            Purpose::Tau => 0x746175,
            Purpose::Instance => 0x696e7374616e63,
        }
    }
}

/// Reproducible RNG handle used by oracles and samplers.
pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for the key `(seed, round, client, purpose, step)`.
///
/// Equal keys give equal streams; distinct keys give independently keyed
/// ChaCha8 generators.
pub fn rng_stream(seed: u64, round: u64, client: u64, purpose: Purpose, step: u64) -> Stream {
    let mut h = splitmix64(seed);
    for part in [purpose.tag(), round, client, step] {
        h = splitmix64(h ^ splitmix64(part));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        h = splitmix64(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Distribution of the number of local steps per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauProfile {
    /// Every client runs `tau` steps every round.
    Fixed { tau: usize },
    /// Each client draws its step count uniformly from `lo..=hi` every round.
    Uniform { lo: usize, hi: usize },
    /// Client `i` always runs `taus[i]` steps.
    PerClient { taus: Vec<usize> },
}

impl TauProfile {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            TauProfile::Fixed { tau } if *tau < 1 => Err(Error::invalid("tau", "must be >= 1")),
            TauProfile::Uniform { lo, .. } if *lo < 1 => {
                Err(Error::invalid("tau_lo", "must be >= 1"))
            }
            TauProfile::Uniform { lo, hi } if hi < lo => Err(Error::invalid(
                "tau_hi",
                format!("must be >= tau_lo ({lo}), got {hi}"),
            )),
            TauProfile::PerClient { taus } if taus.len() != n => Err(Error::invalid(
                "taus",
                format!("needs one entry per client (n = {n}), got {}", taus.len()),
            )),
            TauProfile::PerClient { taus } if taus.iter().any(|&t| t < 1) => {
                Err(Error::invalid("taus", "every entry must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Step counts client `client` can take, each with its probability.
    pub fn support(&self, client: usize) -> Vec<(usize, f64)> {
        match self {
            TauProfile::Fixed { tau } => vec![(*tau, 1.0)],
            TauProfile::Uniform { lo, hi } => {
                let m = (hi - lo + 1) as f64;
                (*lo..=*hi).map(|t| (t, 1.0 / m)).collect()
            }
            TauProfile::PerClient { taus } => vec![(taus[client], 1.0)],
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, TauProfile::Uniform { lo, hi } if lo != hi)
    }
}

/// Who participates in a round and how many local steps every client runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticipationPlan {
    pub round: usize,
    /// Sorted, distinct participant indices.
    pub selected: Vec<usize>,
    /// Local step counts for all `n` clients, participants or not.
    pub taus: Vec<usize>,
}

/// Uniform sample of `participants` distinct clients out of `n`, sorted.
pub fn sample_clients(n: usize, participants: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if participants == 0 || participants > n {
        return Err(Error::invalid(
            "participants",
            format!("P must satisfy 1 <= P <= n, got P = {participants}, n = {n}"),
        ));
    }
    if participants == n {
        return Ok((0..n).collect());
    }
    let mut rng = rng_stream(seed, round as u64, 0, Purpose::Sampling, 0);
    let mut picked = index::sample(&mut rng, n, participants).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Local step counts for every client in `round`.
pub fn assign_taus(n: usize, round: usize, profile: &TauProfile, seed: u64) -> Result<Vec<usize>> {
    profile.validate(n)?;
    let taus = match profile {
        TauProfile::Fixed { tau } => vec![*tau; n],
        TauProfile::PerClient { taus } => taus.clone(),
        TauProfile::Uniform { lo, hi } => (0..n)
            .map(|i| {
                let mut rng = rng_stream(seed, round as u64, i as u64, Purpose::Tau, 0);
                rng.random_range(*lo..=*hi)
            })
            .collect(),
    };
    Ok(taus)
}

/// Participants and step counts for one round.
pub fn plan_round(
    n: usize,
    participants: usize,
    round: usize,
    profile: &TauProfile,
    seed: u64,
) -> Result<ParticipationPlan> {
    Ok(ParticipationPlan {
        round,
        selected: sample_clients(n, participants, round, seed)?,
        taus: assign_taus(n, round, profile, seed)?,
    })
}
