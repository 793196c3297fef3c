use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::text::{ConfusionSet, SentencePair};

/// Corrupts `clean` using the confusion set.
///
/// Every position whose character has a confusion entry is replaced with
/// probability `rate` by a uniformly drawn candidate. The returned pair has
/// `clean` as its target.
pub fn synthesize_pair<R: Rng + ?Sized>(
    clean: &[char],
    cs: &ConfusionSet,
    rate: f64,
    rng: &mut R,
) -> Result<SentencePair> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(CoinError::InvalidConfig(format!(
            "corruption rate {rate} outside [0, 1]"
        )));
    }
    let source = clean
        .iter()
        .map(|&c| match cs.candidates(c) {
            Some(cands) if rng.random_bool(rate) => cands[rng.random_range(0..cands.len())],
            _ => c,
        })
        .collect();
    SentencePair::new(source, clean.to_vec())
}

/// Shape of the synthetic clean-text language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkovOrder {
    /// Independent uniform draws over the alphabet.
    Zero,
    /// First-order chain where each symbol has a small fixed successor set.
    One,
}

/// Settings for the synthetic correction task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub order: MarkovOrder,
    /// Allowed successors per symbol for `MarkovOrder::One`.
    pub successors: usize,
    pub candidates_per_symbol: usize,
    pub corruption_rate: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 30,
            min_len: 10,
            max_len: 20,
            order: MarkovOrder::One,
            successors: 3,
            candidates_per_symbol: 3,
            corruption_rate: 0.1,
            n_train: 5000,
            n_dev: 500,
            n_test: 500,
        }
    }
}

const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

/// Fixed-order Markov sampler over content symbols.
#[derive(Debug, Clone)]
pub struct MarkovLanguage {
    symbols: Vec<char>,
    successors: Option<Vec<Vec<usize>>>,
    min_len: usize,
    max_len: usize,
}

impl MarkovLanguage {
    pub fn new<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Self> {
        if cfg.vocab_size < 2 || cfg.vocab_size > ALPHABET.len() {
            return Err(CoinError::InvalidConfig(format!(
                "vocab_size must be in 2..={}",
                ALPHABET.len()
            )));
        }
        if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
            return Err(CoinError::InvalidConfig(format!(
                "bad length range {}..={}",
                cfg.min_len, cfg.max_len
            )));
        }
        let symbols: Vec<char> = ALPHABET.chars().take(cfg.vocab_size).collect();
        let successors = match cfg.order {
            MarkovOrder::Zero => None,
            MarkovOrder::One => {
                if cfg.successors == 0 || cfg.successors > cfg.vocab_size {
                    return Err(CoinError::InvalidConfig(format!(
                        "successors must be in 1..={}",
                        cfg.vocab_size
                    )));
                }
                Some(
                    (0..symbols.len())
                        .map(|_| sample(rng, symbols.len(), cfg.successors).into_vec())
                        .collect(),
                )
            }
        };
        Ok(MarkovLanguage {
            symbols,
            successors,
            min_len: cfg.min_len,
            max_len: cfg.max_len,
        })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    /// Allowed successor indices per symbol index; `None` for order zero.
    pub fn successors(&self) -> Option<&[Vec<usize>]> {
        self.successors.as_deref()
    }

    pub fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<char> {
        let n = rng.random_range(self.min_len..=self.max_len);
        let mut out = Vec::with_capacity(n);
        let mut prev = rng.random_range(0..self.symbols.len());
        out.push(self.symbols[prev]);
        while out.len() < n {
            prev = match &self.successors {
                None => rng.random_range(0..self.symbols.len()),
                Some(succ) => succ[prev][rng.random_range(0..succ[prev].len())],
            };
            out.push(self.symbols[prev]);
        }
        out
    }

    /// Whether `text` could have been produced by this language.
    pub fn accepts(&self, text: &[char]) -> bool {
        let ids: Option<Vec<usize>> = text
            .iter()
            .map(|c| self.symbols.iter().position(|s| s == c))
            .collect();
        let Some(ids) = ids else { return false };
        match &self.successors {
            None => true,
            Some(succ) => ids.windows(2).all(|w| succ[w[0]].contains(&w[1])),
        }
    }
}

/// Train/dev/test splits of a synthetic correction task plus the generators.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub language: MarkovLanguage,
    pub confusion: ConfusionSet,
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
}

impl SyntheticTask {
    pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let language = MarkovLanguage::new(cfg, &mut rng)?;
        let confusion =
            ConfusionSet::random(language.symbols(), cfg.candidates_per_symbol, &mut rng)?;
        let mut split = |n: usize| -> Result<Vec<SentencePair>> {
            (0..n)
                .map(|_| {
                    let clean = language.sample_sentence(&mut rng);
                    synthesize_pair(&clean, &confusion, cfg.corruption_rate, &mut rng)
                })
                .collect()
        };
        let train = split(cfg.n_train)?;
        let dev = split(cfg.n_dev)?;
        let test = split(cfg.n_test)?;
        Ok(SyntheticTask {
            language,
            confusion,
            train,
            dev,
            test,
        })
    }
}
