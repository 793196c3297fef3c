//! Character-level error detection with dual thresholds.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::nn::checkpoint::{self, decode_header, encode_checkpoint, load_into};
use crate::nn::loss::{bce_with_logits, sigmoid};
use crate::nn::{
    fit, Batch, DetectorHead, Encoder, EncoderConfig, Float, Parameters, Sequence, TrainConfig, TrainLog,
    Trainable,
};
use crate::nn::params::join;
use crate::text::{SentencePair, Vocab, CLS, SEP};

/// Per-position probabilities that the character is erroneous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores(Vec<f64>);

impl DetectionScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoinError::InvalidConfig(format!("score {v} outside [0, 1]")));
        }
        Ok(DetectionScores(values))
    }

    /// Elementwise sigmoid of detector logits.
    pub fn from_logits(logits: &[f64]) -> Self {
        DetectionScores(logits.iter().map(|&z| sigmoid(z)).collect())
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

/// Flags positions whose score strictly exceeds `lambda`.
pub fn threshold(scores: &[f64], lambda: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > lambda).collect()
}

/// High-precision threshold `p` and high-recall threshold `r`, `r ≤ p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub p: f64,
    pub r: f64,
}

impl Thresholds {
    pub fn new(p: f64, r: f64) -> Result<Self> {
        if !(0.0 <= r && r <= p && p <= 1.0) {
            return Err(CoinError::InvalidConfig(format!(
                "thresholds must satisfy 0 <= r <= p <= 1, got p={p} r={r}"
            )));
        }
        Ok(Thresholds { p, r })
    }
}

/// The two flag vectors produced from one score vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub high_p: Vec<bool>,
    pub high_r: Vec<bool>,
}

impl DetectionResult {
    pub fn from_scores(scores: &DetectionScores, t: Thresholds) -> Self {
        DetectionResult {
            high_p: threshold(scores.values(), t.p),
            high_r: threshold(scores.values(), t.r),
        }
    }

    pub fn len(&self) -> usize {
        self.high_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.high_p.is_empty()
    }
}

/// Character-level precision/recall of `flags` against `labels`.
/// Precision is `None` when nothing is flagged, recall when nothing is positive.
pub fn char_precision_recall(flags: &[bool], labels: &[bool]) -> (Option<f64>, Option<f64>) {
    let mut tp = 0usize;
    let mut flagged = 0usize;
    let mut positives = 0usize;
    for (&f, &l) in flags.iter().zip(labels) {
        flagged += f as usize;
        positives += l as usize;
        tp += (f && l) as usize;
    }
    let p = (flagged > 0).then(|| tp as f64 / flagged as f64);
    let r = (positives > 0).then(|| tp as f64 / positives as f64);
    (p, r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target: f64,
    pub p: f64,
    pub r: f64,
    pub achieved_precision_at_p: Option<f64>,
    pub achieved_recall_at_r: Option<f64>,
    pub degraded_flags: Vec<String>,
}

impl CalibrationReport {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds { p: self.p, r: self.r }
    }

    pub fn is_degraded(&self) -> bool {
        !self.degraded_flags.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| CoinError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoinError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Picks character-level thresholds reaching `target` precision (for `p`)
/// and `target` recall (for `r`).
///
/// The candidate grid is every distinct dev score plus 0 and 1, which covers
/// every distinct flag set. `p` is the smallest candidate whose precision
/// reaches the target; `r` is the largest candidate whose recall does. An
/// unreachable target falls back to the best-achieving candidate and is
/// recorded in `degraded_flags`, as is an `r > p` outcome, which is resolved
/// by setting both to their midpoint.
pub fn calibrate(dev_scores: &[DetectionScores], dev_labels: &[Vec<bool>], target: f64) -> Result<CalibrationReport> {
    if dev_scores.len() != dev_labels.len() {
        return Err(CoinError::ShapeMismatch {
            expected: dev_scores.len(),
            actual: dev_labels.len(),
        });
    }
    let mut points: Vec<(f64, bool)> = Vec::new();
    for (s, l) in dev_scores.iter().zip(dev_labels) {
        if s.len() != l.len() {
            return Err(CoinError::ShapeMismatch {
                expected: s.len(),
                actual: l.len(),
            });
        }
        points.extend(s.values().iter().copied().zip(l.iter().copied()));
    }
    let positives = points.iter().filter(|(_, l)| *l).count();
    if positives == 0 {
        return Err(CoinError::Calibration("dev set has no positive labels".into()));
    }

    // Sweep thresholds from high to low; flagged set at λ is {score > λ}.
    points.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut grid: Vec<f64> = points.iter().map(|p| p.0).collect();
    grid.extend([0.0, 1.0]);
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    struct Stat {
        lambda: f64,
        precision: Option<f64>,
        recall: f64,
    }
    let mut stats = Vec::with_capacity(grid.len());
    let (mut idx, mut tp, mut flagged) = (0usize, 0usize, 0usize);
    for &lambda in &grid {
        while idx < points.len() && points[idx].0 > lambda {
            flagged += 1;
            tp += points[idx].1 as usize;
            idx += 1;
        }
        stats.push(Stat {
            lambda,
            precision: (flagged > 0).then(|| tp as f64 / flagged as f64),
            recall: tp as f64 / positives as f64,
        });
    }
    // stats is ordered by descending λ.
    let mut degraded = Vec::new();

    let p = match stats
        .iter()
        .rev()
        .find(|s| s.precision.is_some_and(|p| p >= target))
    {
        Some(s) => s.lambda,
        None => {
            degraded.push("precision_target_unreachable".to_string());
            stats
                .iter()
                .rev()
                .filter_map(|s| s.precision.map(|p| (p, s.lambda)))
                .fold(None, |best: Option<(f64, f64)>, cur| match best {
                    Some(b) if b.0 >= cur.0 => Some(b),
                    _ => Some(cur),
                })
                .map_or(1.0, |(_, l)| l)
        }
    };

    let r = if target <= 0.0 {
        0.0
    } else {
        match stats.iter().find(|s| s.recall >= target) {
            Some(s) => s.lambda,
            None => {
                degraded.push("recall_target_unreachable".to_string());
                0.0
            }
        }
    };

    let (p, r) = if r > p {
        degraded.push("r_exceeds_p_clamped".to_string());
        let mid = 0.5 * (p + r);
        (mid, mid)
    } else {
        (p, r)
    };

    let all_scores: Vec<f64> = points.iter().map(|x| x.0).collect();
    let all_labels: Vec<bool> = points.iter().map(|x| x.1).collect();
    let (achieved_precision_at_p, _) = char_precision_recall(&threshold(&all_scores, p), &all_labels);
    let (_, achieved_recall_at_r) = char_precision_recall(&threshold(&all_scores, r), &all_labels);
    Ok(CalibrationReport {
        target,
        p,
        r,
        achieved_precision_at_p,
        achieved_recall_at_r,
        degraded_flags: degraded,
    })
}

/// Area under the ROC curve (ties count one half). `None` for a single class.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Encoder plus per-position classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNet<F> {
    pub encoder: Encoder<F>,
    pub head: DetectorHead<F>,
}

/// One training sentence: `[CLS] x [SEP]` tokens and one label per character.
#[derive(Debug, Clone)]
pub struct DetectorExample<F> {
    pub sequence: Sequence<F>,
    pub labels: Vec<F>,
}

impl<F: Float> DetectorNet<F> {
    pub fn new(config: EncoderConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config, vocab_size, &mut rng)?;
        let head = DetectorHead::new(encoder.d_model(), encoder.config.init_std, &mut rng);
        Ok(DetectorNet { encoder, head })
    }

    /// Logits for the content positions of each sequence (specials dropped).
    pub fn logits(&self, sequences: &[&Sequence<F>]) -> Result<Vec<Vec<f64>>> {
        let batch = Batch::from_sequences(sequences.iter().copied())?;
        let hidden = self.encoder.encode(&batch)?;
        let rows = content_rows(&batch);
        let (logits, _) = self.head.forward(hidden.select(Axis(0), &rows).view());
        let mut out = Vec::with_capacity(sequences.len());
        let mut k = 0;
        for span in &batch.spans {
            let n = span.len() - 2;
            out.push(logits.iter().skip(k).take(n).map(|v| v.as_f64()).collect());
            k += n;
        }
        Ok(out)
    }
}

fn content_rows<F: Float>(batch: &Batch<F>) -> Vec<usize> {
    batch
        .spans
        .iter()
        .flat_map(|s| (s.start + 1)..(s.end - 1))
        .collect()
}

impl<F: Float> Parameters<F> for DetectorNet<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<F: Float> Trainable<F> for DetectorNet<F> {
    type Example = DetectorExample<F>;

    fn batch_loss(
        &self,
        batch: &[&DetectorExample<F>],
        grad: Option<&mut Self>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let packed = Batch::from_sequences(batch.iter().map(|e| &e.sequence))?;
        let labels: Vec<F> = batch.iter().flat_map(|e| e.labels.iter().copied()).collect();
        let rows = content_rows(&packed);
        if rows.len() != labels.len() {
            return Err(CoinError::ShapeMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let (hidden, cache) = self.encoder.forward_train(&packed, rng)?;
        let selected = hidden.select(Axis(0), &rows);
        let (logits, head_cache) = self.head.forward(selected.view());
        let logits_v = logits.to_vec();
        let (loss_sum, dlogits) = bce_with_logits(&logits_v, &labels);
        let count = labels.len().max(1) as f64;
        if let Some(grad) = grad {
            let scale = F::c(1.0 / count);
            let dlogits = Array1::from_iter(dlogits.into_iter().map(|g| g * scale));
            let dsel = self.head.backward(&head_cache, &dlogits, &mut grad.head);
            let mut dhidden = Array2::zeros(hidden.raw_dim());
            for (k, &row) in rows.iter().enumerate() {
                dhidden.row_mut(row).assign(&dsel.row(k));
            }
            self.encoder.backward(&packed, &cache, dhidden, &mut grad.encoder);
        }
        Ok(loss_sum / count)
    }
}

/// A trained detector together with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector<F> {
    pub vocab: Vocab,
    pub net: DetectorNet<F>,
}

/// Result of [`train_detector`].
#[derive(Debug, Clone)]
pub struct DetectorTraining<F> {
    pub detector: Detector<F>,
    pub log: TrainLog,
    /// Set when the training data had no erroneous characters.
    pub degenerate: bool,
}

pub const DETECTOR_KIND: &str = "detector";

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    encoder: EncoderConfig,
    vocab: Vocab,
}

impl<F: Float> Detector<F> {
    pub fn new(vocab: Vocab, config: EncoderConfig, seed: u64) -> Result<Self> {
        let net = DetectorNet::new(config, vocab.len(), seed)?;
        Ok(Detector { vocab, net })
    }

    pub fn sequence(&self, text: &[char]) -> Result<Sequence<F>> {
        let len = text.len() + 2;
        if len > self.net.encoder.config.max_len {
            return Err(CoinError::TooLong {
                len,
                max_len: self.net.encoder.config.max_len,
            });
        }
        let mut tokens = Vec::with_capacity(len);
        tokens.push(CLS);
        tokens.extend(self.vocab.encode(text));
        tokens.push(SEP);
        Ok(Sequence::tokens(tokens))
    }

    pub fn example(&self, pair: &SentencePair) -> Result<DetectorExample<F>> {
        Ok(DetectorExample {
            sequence: self.sequence(pair.source())?,
            labels: pair
                .error_mask()
                .into_iter()
                .map(|e| if e { F::one() } else { F::zero() })
                .collect(),
        })
    }

    /// Sigmoid probabilities of error for each character of `text`.
    pub fn score(&self, text: &[char]) -> Result<DetectionScores> {
        Ok(self.score_batch(&[text])?.remove(0))
    }

    pub fn score_batch(&self, texts: &[&[char]]) -> Result<Vec<DetectionScores>> {
        let seqs = texts
            .iter()
            .map(|t| self.sequence(t))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Sequence<F>> = seqs.iter().collect();
        Ok(self
            .net
            .logits(&refs)?
            .iter()
            .map(|l| DetectionScores::from_logits(l))
            .collect())
    }

    /// Scores many sentences in chunks of `chunk` for bounded memory.
    pub fn score_all(&self, texts: &[&[char]], chunk: usize) -> Result<Vec<DetectionScores>> {
        let mut out = Vec::with_capacity(texts.len());
        for c in texts.chunks(chunk.max(1)) {
            out.extend(self.score_batch(c)?);
        }
        Ok(out)
    }

    pub fn detect(&self, text: &[char], t: Thresholds) -> Result<DetectionResult> {
        Ok(DetectionResult::from_scores(&self.score(text)?, t))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_value(DetectorMeta {
            encoder: self.net.encoder.config.clone(),
            vocab: self.vocab.clone(),
        })?;
        encode_checkpoint(DETECTOR_KIND, meta, &self.net)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, data) = decode_header(bytes)?;
        if header.kind != DETECTOR_KIND {
            return Err(CoinError::Checkpoint(format!(
                "expected a {DETECTOR_KIND} checkpoint, found {}",
                header.kind
            )));
        }
        let meta: DetectorMeta = serde_json::from_value(header.meta.clone())?;
        let mut det = Detector::new(meta.vocab, meta.encoder, 0)?;
        load_into(&header, data, &mut det.net)?;
        Ok(det)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }
}

/// Trains a detector with binary cross-entropy on `1{x_i != y_i}` labels.
pub fn train_detector(
    pairs: &[SentencePair],
    vocab: &Vocab,
    encoder: &EncoderConfig,
    train: &TrainConfig,
) -> Result<DetectorTraining<f32>> {
    if pairs.is_empty() {
        return Err(CoinError::InvalidConfig("detector training set is empty".into()));
    }
    let mut detector = Detector::<f32>::new(vocab.clone(), encoder.clone(), train.seed)?;
    let degenerate = pairs.iter().all(|p| !p.has_errors());
    if degenerate {
        log::warn!("detector training data has no erroneous characters; recall is undefined downstream");
    }
    let examples = pairs
        .iter()
        .map(|p| detector.example(p))
        .collect::<Result<Vec<_>>>()?;
    let log = fit(&mut detector.net, &examples, train, |epoch, loss| {
        log::info!("detector epoch {epoch}: loss {loss:.5}");
    })?;
    Ok(DetectorTraining {
        detector,
        log,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> DetectionScores {
        DetectionScores::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_scores() {
        assert_eq!(DetectionScores::from_logits(&[0.0, 0.0]).values(), &[0.5, 0.5]);
        let s = DetectionScores::from_logits(&[20.0, -20.0]);
        assert!((s.values()[0] - 1.0).abs() < 1e-8);
        assert!(s.values()[1].abs() < 1e-8);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold(&[0.9, 0.1], 0.5), vec![true, false]);
        assert_eq!(threshold(&[1.0, 0.3], 1.0), vec![false, false]);
        assert_eq!(threshold(&[0.2, 0.3], 0.0), vec![true, true]);
        assert_eq!(threshold(&[0.5], 0.5), vec![false]);
    }

    #[test]
    fn thresholds_validate_order() {
        assert!(Thresholds::new(0.9, 0.2).is_ok());
        assert!(Thresholds::new(0.2, 0.9).is_err());
        assert!(Thresholds::new(1.2, 0.9).is_err());
    }

    #[test]
    fn calibrate_separated_scores() {
        let s = vec![scores(&[0.9, 0.1, 0.1, 0.9]), scores(&[0.1, 0.1])];
        let l = vec![vec![true, false, false, true], vec![false, false]];
        let rep = calibrate(&s, &l, 0.95).unwrap();
        assert!(rep.degraded_flags.is_empty());
        assert!(rep.p >= rep.r);
        assert!((0.1..0.9).contains(&rep.p));
        assert_eq!(rep.achieved_precision_at_p, Some(1.0));
        assert_eq!(rep.achieved_recall_at_r, Some(1.0));
    }

    #[test]
    fn calibrate_vacuous_target() {
        let s = vec![scores(&[0.7, 0.2, 0.4])];
        let l = vec![vec![true, false, false]];
        let rep = calibrate(&s, &l, 0.0).unwrap();
        assert_eq!(rep.r, 0.0);
        assert_eq!(rep.p, 0.0);
    }

    #[test]
    fn calibrate_requires_positives() {
        let s = vec![scores(&[0.7, 0.2])];
        let l = vec![vec![false, false]];
        assert!(matches!(calibrate(&s, &l, 0.95), Err(CoinError::Calibration(_))));
    }

    #[test]
    fn calibrate_unreachable_precision_is_flagged() {
        // The highest-scored character is clean, so precision never exceeds 2/3.
        let s = vec![scores(&[0.9, 0.8, 0.7])];
        let l = vec![vec![false, true, true]];
        let rep = calibrate(&s, &l, 0.95).unwrap();
        assert!(rep.degraded_flags.iter().any(|f| f == "precision_target_unreachable"));
        assert!(rep.r <= rep.p);
    }

    #[test]
    fn auc_reference() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, false]), None);
    }
}
