use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};

/// Simulated detector quality: how many gold errors survive and how many
/// false flags land on correct characters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Percentage of gold error flags retained.
    pub cor_pct: f64,
    /// False flags on correct characters, as a percentage of the gold error count.
    pub fp_count_pct: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            cor_pct: 100.0,
            fp_count_pct: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn new(cor_pct: f64, fp_count_pct: f64, seed: u64) -> Result<Self> {
        let spec = NoiseSpec {
            cor_pct,
            fp_count_pct,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.cor_pct) {
            return Err(CoinError::InvalidConfig(format!("cor_pct {} outside [0, 100]", self.cor_pct)));
        }
        if !(self.fp_count_pct >= 0.0 && self.fp_count_pct.is_finite()) {
            return Err(CoinError::InvalidConfig(format!(
                "fp_count_pct {} must be finite and non-negative",
                self.fp_count_pct
            )));
        }
        Ok(())
    }

    /// Gold flags kept out of `n_gold`.
    pub fn retained(&self, n_gold: usize) -> usize {
        pct_floor(self.cor_pct, n_gold)
    }

    /// False flags requested for `n_gold` gold errors, before clamping.
    pub fn false_positives(&self, n_gold: usize) -> usize {
        pct_floor(self.fp_count_pct, n_gold)
    }
}

fn pct_floor(pct: f64, n: usize) -> usize {
    (pct * n as f64 / 100.0 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOutcome<T> {
    pub flags: T,
    pub retained: usize,
    pub false_positives: usize,
    /// Set when fewer correct positions existed than false flags requested.
    pub clamped: bool,
}

/// Noisy flags over one flat position vector.
///
/// Gold flags are kept in a seed-determined random order and the first
/// `retained` survive; false flags take the first positions of a
/// seed-determined order over correct positions. For one seed, a lower
/// `cor_pct` therefore flags a subset of what a higher one flags.
pub fn inject_detection_noise(gold: &[bool], spec: &NoiseSpec) -> Result<NoiseOutcome<Vec<bool>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut errors: Vec<usize> = (0..gold.len()).filter(|&i| gold[i]).collect();
    let mut clean: Vec<usize> = (0..gold.len()).filter(|&i| !gold[i]).collect();
    errors.shuffle(&mut rng);
    clean.shuffle(&mut rng);
    let retained = spec.retained(errors.len());
    let requested = spec.false_positives(errors.len());
    let false_positives = requested.min(clean.len());
    if requested > clean.len() {
        log::warn!(
            "requested {requested} false flags but only {} correct positions exist; clamping",
            clean.len()
        );
    }
    let mut flags = vec![false; gold.len()];
    for &i in errors[..retained].iter().chain(&clean[..false_positives]) {
        flags[i] = true;
    }
    Ok(NoiseOutcome {
        flags,
        retained,
        false_positives,
        clamped: requested > clean.len(),
    })
}

/// Corpus-level injection: counts are taken over all positions of all
/// sentences, then the flags are split back per sentence.
pub fn inject_corpus_noise(gold: &[Vec<bool>], spec: &NoiseSpec) -> Result<NoiseOutcome<Vec<Vec<bool>>>> {
    let flat: Vec<bool> = gold.iter().flatten().copied().collect();
    let out = inject_detection_noise(&flat, spec)?;
    let mut rest = out.flags.as_slice();
    let flags = gold
        .iter()
        .map(|g| {
            let (head, tail) = rest.split_at(g.len());
            rest = tail;
            head.to_vec()
        })
        .collect();
    Ok(NoiseOutcome {
        flags,
        retained: out.retained,
        false_positives: out.false_positives,
        clamped: out.clamped,
    })
}
