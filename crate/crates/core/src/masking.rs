//! Selective masking and the two-segment corrector input.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::text::{CLS, MASK, SEP};

/// Source positions to mask in the rewritten copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked: BTreeSet<usize>,
    pub window_length: usize,
    pub len: usize,
}

impl MaskPlan {
    /// A plan masking every position, used when selective masking is off.
    pub fn full(len: usize) -> Self {
        MaskPlan {
            masked: (0..len).collect(),
            window_length: 2 * len + 1,
            len,
        }
    }

    pub fn empty(len: usize) -> Self {
        MaskPlan {
            masked: BTreeSet::new(),
            window_length: 1,
            len,
        }
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked.contains(&i)
    }
}

fn check_window(window_length: usize) -> Result<()> {
    if window_length == 0 || window_length % 2 == 0 {
        return Err(CoinError::InvalidConfig(format!(
            "mask window length must be odd and >= 1, got {window_length}"
        )));
    }
    Ok(())
}

/// Masks the centred window of `window_length` positions around every flag,
/// clipped to the sentence.
pub fn plan_mask(flags: &[bool], window_length: usize) -> Result<MaskPlan> {
    check_window(window_length)?;
    let half = (window_length - 1) / 2;
    let n = flags.len();
    let mut masked = BTreeSet::new();
    for (g, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        let lo = g.saturating_sub(half);
        let hi = (g + half).min(n - 1);
        masked.extend(lo..=hi);
    }
    Ok(MaskPlan {
        masked,
        window_length,
        len: n,
    })
}

/// How position ids are assigned to the corrector input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionScheme {
    /// `0..2n+3` across the whole sequence.
    #[default]
    Absolute,
    /// The second segment reuses the ids of the aligned source characters, so
    /// `x_j` and its rewritten slot share a position id.
    Aligned,
}

/// `[CLS] X [SEP] X_m [SEP]` with its segment map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectorInput {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    /// Source length `n`.
    pub source_len: usize,
    /// Offsets within segment 1 that hold `[MASK]`.
    pub masked: Vec<usize>,
}

impl CorrectorInput {
    /// Token index of the first source character.
    pub const SOURCE_START: usize = 1;

    /// Token index of the first character of the rewritten segment.
    pub fn rewrite_start(&self) -> usize {
        self.source_len + 2
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token index of segment-1 offset `j`; aligned with source position `j`.
    pub fn rewrite_index(&self, j: usize) -> usize {
        self.rewrite_start() + j
    }

    pub fn aligned_source(&self, j: usize) -> usize {
        j
    }

    pub fn positions(&self, scheme: PositionScheme) -> Vec<usize> {
        let n = self.source_len;
        match scheme {
            PositionScheme::Absolute => (0..self.len()).collect(),
            PositionScheme::Aligned => (0..n + 2).chain(1..=n + 1).collect(),
        }
    }

    /// Token count needed for a source of `n` characters.
    pub fn required_len(n: usize) -> usize {
        2 * n + 3
    }
}

/// Lays out the unaltered source next to a copy with the planned positions masked.
pub fn build_input(source: &[usize], plan: &MaskPlan) -> Result<CorrectorInput> {
    let n = source.len();
    if plan.len != n {
        return Err(CoinError::ShapeMismatch {
            expected: n,
            actual: plan.len,
        });
    }
    if let Some(&bad) = plan.masked.iter().find(|&&i| i >= n) {
        return Err(CoinError::InvalidConfig(format!(
            "mask index {bad} outside sentence of length {n}"
        )));
    }
    let mut tokens = Vec::with_capacity(CorrectorInput::required_len(n));
    tokens.push(CLS);
    tokens.extend_from_slice(source);
    tokens.push(SEP);
    tokens.extend((0..n).map(|j| if plan.is_masked(j) { MASK } else { source[j] }));
    tokens.push(SEP);
    let segments = (0..tokens.len()).map(|i| (i >= n + 2) as usize).collect();
    Ok(CorrectorInput {
        tokens,
        segments,
        source_len: n,
        masked: plan.masked.iter().copied().collect(),
    })
}
