use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricLevel {
    /// The set of edited positions must equal the gold error set.
    Detection,
    /// The whole prediction must equal the target.
    Correction,
}

/// Sentence-level precision, recall and F1 with the counts behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: MetricLevel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    /// Edited sentences that are not true positives.
    pub fp: usize,
    /// Erroneous sentences that are not true positives.
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Sentences the model edited.
    pub positives: usize,
    /// Sentences whose source differs from the target.
    pub gold_positives: usize,
    pub total: usize,
    pub degraded_flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

impl EvalReport {
    pub fn is_degraded(&self) -> bool {
        !self.degraded_flags.is_empty()
    }

    pub fn with_fingerprint(mut self, fp: impl Into<String>) -> Self {
        self.fingerprint = Some(fp.into());
        self
    }
}

fn diff_set<'a>(a: &'a [char], b: &'a [char]) -> impl Iterator<Item = bool> + 'a {
    a.iter().zip(b).map(|(x, y)| x != y)
}

/// Scores predictions against targets at the requested level.
pub fn sentence_metrics<S, P, T>(sources: &[S], predictions: &[P], targets: &[T], level: MetricLevel) -> Result<EvalReport>
where
    S: AsRef<[char]>,
    P: AsRef<[char]>,
    T: AsRef<[char]>,
{
    if sources.is_empty() {
        return Err(CoinError::Metrics("empty corpus".into()));
    }
    if predictions.len() != sources.len() || targets.len() != sources.len() {
        return Err(CoinError::Metrics(format!(
            "corpus sizes differ: {} sources, {} predictions, {} targets",
            sources.len(),
            predictions.len(),
            targets.len()
        )));
    }
    let (mut tp, mut positives, mut gold_positives) = (0, 0, 0);
    for (i, ((x, yhat), y)) in sources.iter().zip(predictions).zip(targets).enumerate() {
        let (x, yhat, y) = (x.as_ref(), yhat.as_ref(), y.as_ref());
        if yhat.len() != x.len() || y.len() != x.len() {
            return Err(CoinError::Metrics(format!(
                "sentence {i}: lengths differ (source {}, prediction {}, target {})",
                x.len(),
                yhat.len(),
                y.len()
            )));
        }
        let edited = yhat != x;
        positives += edited as usize;
        gold_positives += (x != y) as usize;
        let hit = match level {
            MetricLevel::Correction => yhat == y,
            MetricLevel::Detection => diff_set(x, yhat).eq(diff_set(x, y)),
        };
        tp += (edited && hit) as usize;
    }
    let mut degraded = Vec::new();
    let precision = if positives == 0 {
        degraded.push("no_predicted_positives".to_string());
        0.0
    } else {
        tp as f64 / positives as f64
    };
    let recall = if gold_positives == 0 {
        degraded.push("no_gold_positives".to_string());
        0.0
    } else {
        tp as f64 / gold_positives as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        level,
        precision,
        recall,
        f1,
        tp,
        fp: positives - tp,
        fn_: gold_positives - tp,
        positives,
        gold_positives,
        total: sources.len(),
        degraded_flags: degraded,
        fingerprint: None,
    })
}
