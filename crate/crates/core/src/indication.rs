//! Fuzzy error indication: turns detected error positions into a smooth
//! per-position scalar that is added to every embedding channel.

use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Dirac,
    Uniform,
    Triangular,
    Gaussian,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::Dirac,
        KernelFamily::Uniform,
        KernelFamily::Triangular,
        KernelFamily::Gaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Dirac => "dirac",
            KernelFamily::Uniform => "uniform",
            KernelFamily::Triangular => "triangular",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

/// Kernel shape and sampling parameters.
///
/// The kernel is evaluated at the offset `i - g` from each flagged position
/// `g`, so the distribution mean never needs to be stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuzzyParams {
    pub family: KernelFamily,
    /// Gaussian spread.
    pub delta: f64,
    /// Sampling step between neighbouring positions.
    pub step: f64,
    /// Values at or below this are zeroed.
    pub theta: f64,
    /// Half-width for the uniform and triangular kernels.
    pub window: usize,
}

impl Default for FuzzyParams {
    fn default() -> Self {
        FuzzyParams {
            family: KernelFamily::Gaussian,
            delta: 1.0,
            step: 1.0,
            theta: 0.1,
            window: 2,
        }
    }
}

impl FuzzyParams {
    pub fn with_family(family: KernelFamily) -> Self {
        FuzzyParams {
            family,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.step > 0.0 && self.theta >= 0.0) {
            return Err(CoinError::InvalidConfig(format!(
                "fuzzy params need delta > 0, step > 0, theta >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Peak-normalized kernel value at `offset` (so `kernel(0) == 1`).
pub fn kernel(offset: i64, params: &FuzzyParams) -> f64 {
    let dist = offset.unsigned_abs() as f64;
    match params.family {
        KernelFamily::Dirac => (offset == 0) as u8 as f64,
        KernelFamily::Uniform => (dist <= params.window as f64) as u8 as f64,
        KernelFamily::Triangular => {
            if params.window == 0 {
                (offset == 0) as u8 as f64
            } else {
                (1.0 - dist / params.window as f64).max(0.0)
            }
        }
        KernelFamily::Gaussian => {
            let x = offset as f64 * params.step;
            (-(x * x) / (2.0 * params.delta * params.delta)).exp()
        }
    }
}

/// Per-position indication values `G(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyEmbedding(Vec<f64>);

impl FuzzyEmbedding {
    pub fn zeros(n: usize) -> Self {
        FuzzyEmbedding(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sums the kernel over all flagged positions and zeroes every position whose
/// sum does not exceed `theta`.
pub fn fuzzy_embedding(flags: &[bool], params: &FuzzyParams) -> FuzzyEmbedding {
    let flagged: Vec<i64> = flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(g, _)| g as i64)
        .collect();
    FuzzyEmbedding(
        (0..flags.len() as i64)
            .map(|i| {
                let eps: f64 = flagged.iter().map(|&g| kernel(i - g, params)).sum();
                if eps > params.theta {
                    eps
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Layout of the token sequence that receives indication offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffsetLayout {
    pub total_len: usize,
    /// First token index of the source characters.
    pub source_start: usize,
    /// First token index of the rewritten copy, when offsets are mirrored there.
    pub mirror_start: Option<usize>,
}

/// Broadcasts `G` onto token positions: source characters get `G_i`, all
/// other tokens (specials, and the second segment unless mirrored) get 0.
pub fn apply_ep(embedding: &FuzzyEmbedding, source_len: usize, layout: OffsetLayout) -> Result<Vec<f64>> {
    if embedding.len() != source_len {
        return Err(CoinError::ShapeMismatch {
            expected: source_len,
            actual: embedding.len(),
        });
    }
    let mut offsets = vec![0.0; layout.total_len];
    for start in std::iter::once(layout.source_start).chain(layout.mirror_start) {
        if start + source_len > layout.total_len {
            return Err(CoinError::ShapeMismatch {
                expected: layout.total_len,
                actual: start + source_len,
            });
        }
        offsets[start..start + source_len].copy_from_slice(embedding.values());
    }
    Ok(offsets)
}
