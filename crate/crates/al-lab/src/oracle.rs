//! Simulated oracles (clean and noisy) and the baseline questioning
//! strategies. Ground-truth labels live behind this module; the learner
//! only ever sees what the configured oracle hands back.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::OutputMatrix;
use crate::acquisition::pred_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    NoOracle,
    EpsilonGreedy,
    EntropyResponse,
    Soqal,
    FullOracle,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::NoOracle => "no-oracle",
            Strategy::EpsilonGreedy => "epsilon-greedy",
            Strategy::EntropyResponse => "entropy-response",
            Strategy::Soqal => "soqal",
            Strategy::FullOracle => "full-oracle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    None,
    Random,
    NearestNeighbour,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub strategy: Strategy,
    pub noise: NoiseMode,
    /// Flip probability.
    pub gamma: f64,
    /// Epsilon-greedy decay constant.
    pub k: f64,
    /// Entropy-response fraction of the maximum entropy.
    pub w: f64,
    /// Hellinger gate threshold for the selective strategy.
    pub s: f64,
    /// Use raw features instead of the network's penultimate representation
    /// for nearest-neighbour noise.
    pub nn_raw_features: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            strategy: Strategy::FullOracle,
            noise: NoiseMode::None,
            gamma: 0.0,
            k: 5.0,
            w: 0.9,
            s: 0.15,
            nn_raw_features: false,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0,1]", self.gamma)));
        }
        if !(self.w > 0.0 && self.w <= 1.0) {
            return Err(Error::Config(format!("w {} outside (0,1]", self.w)));
        }
        if !(0.0..=1.0).contains(&self.s) {
            return Err(Error::Config(format!("S {} outside [0,1]", self.s)));
        }
        if self.k <= 0.0 {
            return Err(Error::Config(format!("k {} must be positive", self.k)));
        }
        Ok(())
    }
}

/// A labelled reference instance in the embedding used for NN noise.
#[derive(Debug, Clone)]
pub struct NnRef {
    pub id: u64,
    pub label: usize,
    pub embedding: Vec<f64>,
}

/// Uniform flip to one of the C-1 other classes.
pub fn flip_random(true_label: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    if classes < 2 {
        return Err(Error::Oracle("no valid flip with a single class".into()));
    }
    let pick = rng.gen_range(0..classes - 1);
    Ok(if pick >= true_label { pick + 1 } else { pick })
}

/// Label of the Euclidean-nearest reference whose label differs; distance
/// ties break toward the lowest instance id.
pub fn flip_nearest_neighbour(embedded: &[f64], true_label: usize, refs: &[NnRef]) -> Result<usize> {
    let mut best: Option<(f64, u64, usize)> = None;
    for r in refs {
        if r.label == true_label {
            continue;
        }
        let d2: f64 = r.embedding.iter().zip(embedded).map(|(a, b)| (a - b) * (a - b)).sum();
        let cand = (d2, r.id, r.label);
        best = Some(match best {
            None => cand,
            Some(cur) if (cand.0, cand.1) < (cur.0, cur.1) => cand,
            Some(cur) => cur,
        });
    }
    best.map(|(_, _, label)| label)
        .ok_or_else(|| Error::Oracle("no reference instance of a different class".into()))
}

/// Answer a label request: clean with probability 1-gamma, otherwise the
/// configured flip. `embedded` and `refs` are only consulted for
/// nearest-neighbour noise.
pub fn oracle_label(
    true_label: usize,
    classes: usize,
    cfg: &OracleConfig,
    embedded: &[f64],
    refs: &[NnRef],
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if cfg.noise == NoiseMode::None || cfg.gamma == 0.0 || rng.gen::<f64>() >= cfg.gamma {
        return Ok(true_label);
    }
    match cfg.noise {
        NoiseMode::None => Ok(true_label),
        NoiseMode::Random => flip_random(true_label, classes, rng),
        NoiseMode::NearestNeighbour => flip_nearest_neighbour(embedded, true_label, refs),
    }
}

/// epsilon = exp(-epoch / (k * tau)); epsilon-greedy asks the oracle iff a
/// uniform draw falls below it.
pub fn epsilon_schedule(epoch: u64, k: f64, tau: u64) -> f64 {
    (-(epoch as f64) / (k * tau as f64)).exp()
}

/// Ask iff the entropy of the mean MC output exceeds w * ln C.
pub fn entropy_response_ask(g: &OutputMatrix, w: f64) -> bool {
    pred_entropy(g) > w * (g.classes() as f64).ln()
}
