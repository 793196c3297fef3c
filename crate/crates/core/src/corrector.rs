//! Rephrasing corrector and the end-to-end detect-then-correct pipeline.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CoinConfig, FlagSource};
use crate::detector::{DetectionResult, DetectionScores, Detector, Thresholds};
use crate::error::{CoinError, Result};
use crate::eval::inject_corpus_noise;
use crate::indication::{apply_ep, fuzzy_embedding, FuzzyParams, OffsetLayout};
use crate::masking::{build_input, plan_mask, CorrectorInput, MaskPlan, PositionScheme};
use crate::nn::checkpoint::{self, decode_header, encode_checkpoint, load_into};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::params::join;
use crate::nn::{fit, Batch, Encoder, EncoderConfig, Float, LmHead, Parameters, Sequence, TrainConfig, TrainLog, Trainable};
use crate::text::{SentencePair, Vocab, NUM_SPECIALS};

/// How detections feed the corrector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    /// Fuzzy indication of high-precision flags; `None` disables it.
    pub ep: Option<FuzzyParams>,
    pub ep_both_segments: bool,
    /// Mask window around high-recall flags; `None` masks the whole copy.
    pub sm_window: Option<usize>,
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy {
            ep: Some(FuzzyParams::default()),
            ep_both_segments: false,
            sm_window: Some(5),
        }
    }
}

/// Decoding mode for the rewritten segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Every segment-1 position takes the model's argmax.
    #[default]
    Free,
    /// Unmasked positions keep their source character.
    CopyThrough,
}

/// Where a predicted character came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Forced copy of the source character.
    Copied,
    /// Model argmax at an unmasked slot.
    Predicted,
    /// Model argmax at a masked slot.
    Generated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutput {
    pub prediction: Vec<char>,
    /// Softmax over the vocabulary at each segment-1 position.
    pub distributions: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
    pub plan: MaskPlan,
    pub indication: Vec<f64>,
}

impl CorrectionOutput {
    pub fn prediction_string(&self) -> String {
        self.prediction.iter().collect()
    }
}

/// Anything that produces per-character error probabilities.
pub trait ErrorScorer {
    fn score_batch(&self, texts: &[&[char]]) -> Result<Vec<DetectionScores>>;
}

impl<F: Float> ErrorScorer for Detector<F> {
    fn score_batch(&self, texts: &[&[char]]) -> Result<Vec<DetectionScores>> {
        Detector::score_all(self, texts, 64)
    }
}

/// A corrector input ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub input: CorrectorInput,
    pub positions: Vec<usize>,
    pub offsets: Option<Vec<f64>>,
    pub indication: Vec<f64>,
    pub plan: MaskPlan,
}

/// Anything that maps a prepared input to segment-1 logits (`n × |vocab|`).
pub trait RewriteModel {
    fn vocab(&self) -> &Vocab;
    fn max_len(&self) -> usize;
    fn strategy(&self) -> Strategy;
    fn position_scheme(&self) -> PositionScheme;
    fn rewrite_logits(&self, inputs: &[PreparedInput]) -> Result<Vec<Array2<f64>>>;
}

/// Builds the corrector input for `source` from the two flag vectors.
pub fn prepare_input(
    vocab: &Vocab,
    max_len: usize,
    scheme: PositionScheme,
    strategy: &Strategy,
    source: &[char],
    ep_flags: &[bool],
    sm_flags: &[bool],
) -> Result<PreparedInput> {
    let n = source.len();
    let required = CorrectorInput::required_len(n);
    if required > max_len {
        return Err(CoinError::SentenceTooLong {
            chars: n,
            required,
            max_len,
            max_chars: max_len.saturating_sub(3) / 2,
        });
    }
    for flags in [ep_flags, sm_flags] {
        if flags.len() != n {
            return Err(CoinError::ShapeMismatch {
                expected: n,
                actual: flags.len(),
            });
        }
    }
    let plan = match strategy.sm_window {
        Some(l) => plan_mask(sm_flags, l)?,
        None => MaskPlan::full(n),
    };
    let input = build_input(&vocab.encode(source), &plan)?;
    let (offsets, indication) = match &strategy.ep {
        Some(params) => {
            let g = fuzzy_embedding(ep_flags, params);
            let layout = OffsetLayout {
                total_len: input.len(),
                source_start: CorrectorInput::SOURCE_START,
                mirror_start: strategy.ep_both_segments.then(|| input.rewrite_start()),
            };
            (Some(apply_ep(&g, n, layout)?), g.values().to_vec())
        }
        None => (None, vec![0.0; n]),
    };
    Ok(PreparedInput {
        positions: input.positions(scheme),
        input,
        offsets,
        indication,
        plan,
    })
}

/// Argmax decoding over content symbols, with optional copy-through.
pub fn decode(
    vocab: &Vocab,
    source: &[char],
    prepared: &PreparedInput,
    logits: &Array2<f64>,
    mode: InferenceMode,
) -> CorrectionOutput {
    let mut prediction = Vec::with_capacity(source.len());
    let mut provenance = Vec::with_capacity(source.len());
    let mut distributions = Vec::with_capacity(source.len());
    for (j, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        distributions.push(exp.iter().map(|e| e / sum).collect());
        let masked = prepared.plan.is_masked(j);
        if mode == InferenceMode::CopyThrough && !masked {
            prediction.push(source[j]);
            provenance.push(Provenance::Copied);
            continue;
        }
        let best = (NUM_SPECIALS..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
            .and_then(|id| vocab.char_of(id));
        prediction.push(best.unwrap_or(source[j]));
        provenance.push(if masked {
            Provenance::Generated
        } else {
            Provenance::Predicted
        });
    }
    CorrectionOutput {
        prediction,
        distributions,
        provenance,
        plan: prepared.plan.clone(),
        indication: prepared.indication.clone(),
    }
}

/// Corrects `sources` given externally supplied flag vectors.
pub fn correct_with_flags<C: RewriteModel>(
    corrector: &C,
    sources: &[&[char]],
    ep_flags: &[Vec<bool>],
    sm_flags: &[Vec<bool>],
    strategy: &Strategy,
    mode: InferenceMode,
) -> Result<Vec<CorrectionOutput>> {
    if ep_flags.len() != sources.len() || sm_flags.len() != sources.len() {
        return Err(CoinError::ShapeMismatch {
            expected: sources.len(),
            actual: ep_flags.len().min(sm_flags.len()),
        });
    }
    let prepared = sources
        .iter()
        .zip(ep_flags.iter().zip(sm_flags))
        .map(|(src, (ep, sm))| {
            prepare_input(
                corrector.vocab(),
                corrector.max_len(),
                corrector.position_scheme(),
                strategy,
                src,
                ep,
                sm,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(sources.len());
    for (chunk_src, chunk_prep) in sources.chunks(64).zip(prepared.chunks(64)) {
        let logits = corrector.rewrite_logits(chunk_prep)?;
        for ((src, prep), lg) in chunk_src.iter().zip(chunk_prep).zip(&logits) {
            out.push(decode(corrector.vocab(), src, prep, lg, mode));
        }
    }
    Ok(out)
}

/// Inference settings for [`correct`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub thresholds: Thresholds,
    pub strategy: Strategy,
    pub mode: InferenceMode,
}

impl PipelineConfig {
    /// Settings matching what `corrector` was trained with.
    pub fn for_model<C: RewriteModel>(corrector: &C, thresholds: Thresholds, mode: InferenceMode) -> Self {
        PipelineConfig {
            thresholds,
            strategy: corrector.strategy(),
            mode,
        }
    }
}

/// Detect, fuse, mask, rewrite: the full pipeline on one sentence.
pub fn correct<D: ErrorScorer, C: RewriteModel>(
    detector: &D,
    corrector: &C,
    source: &[char],
    config: &PipelineConfig,
) -> Result<CorrectionOutput> {
    Ok(correct_batch(detector, corrector, &[source], config)?.remove(0))
}

pub fn correct_batch<D: ErrorScorer, C: RewriteModel>(
    detector: &D,
    corrector: &C,
    sources: &[&[char]],
    config: &PipelineConfig,
) -> Result<Vec<CorrectionOutput>> {
    let scores = detector.score_batch(sources)?;
    let detections: Vec<DetectionResult> = scores
        .iter()
        .map(|s| DetectionResult::from_scores(s, config.thresholds))
        .collect();
    let ep: Vec<Vec<bool>> = detections.iter().map(|d| d.high_p.clone()).collect();
    let sm: Vec<Vec<bool>> = detections.into_iter().map(|d| d.high_r).collect();
    correct_with_flags(corrector, sources, &ep, &sm, &config.strategy, config.mode)
}

/// Frozen detector and corrector bundled with their inference settings.
#[derive(Debug, Clone)]
pub struct Pipeline<D, C> {
    pub detector: D,
    pub corrector: C,
    pub config: PipelineConfig,
}

impl<D: ErrorScorer, C: RewriteModel> Pipeline<D, C> {
    pub fn new(detector: D, corrector: C, config: PipelineConfig) -> Self {
        Pipeline {
            detector,
            corrector,
            config,
        }
    }

    pub fn correct(&self, source: &[char]) -> Result<CorrectionOutput> {
        correct(&self.detector, &self.corrector, source, &self.config)
    }

    pub fn correct_all(&self, sources: &[&[char]]) -> Result<Vec<CorrectionOutput>> {
        correct_batch(&self.detector, &self.corrector, sources, &self.config)
    }
}

/// Encoder plus vocabulary projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorNet<F> {
    pub encoder: Encoder<F>,
    pub lm_head: LmHead<F>,
}

/// One training sentence with targets for every segment-1 slot.
#[derive(Debug, Clone)]
pub struct CorrectorExample<F> {
    pub sequence: Sequence<F>,
    pub targets: Vec<usize>,
    pub weights: Vec<F>,
}

fn rewrite_rows<F: Float>(batch: &Batch<F>) -> Vec<usize> {
    batch
        .spans
        .iter()
        .flat_map(|s| {
            let n = (s.len() - 3) / 2;
            (s.start + n + 2)..(s.start + 2 * n + 2)
        })
        .collect()
}

impl<F: Float> CorrectorNet<F> {
    pub fn new(config: EncoderConfig, vocab_size: usize, tie_lm_head: bool, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config, vocab_size, &mut rng)?;
        let lm_head = LmHead::new(encoder.d_model(), vocab_size, tie_lm_head, encoder.config.init_std, &mut rng);
        Ok(CorrectorNet { encoder, lm_head })
    }

    /// Segment-1 logits for each sequence.
    pub fn logits(&self, sequences: &[&Sequence<F>]) -> Result<Vec<Array2<f64>>> {
        let batch = Batch::from_sequences(sequences.iter().copied())?;
        let hidden = self.encoder.encode(&batch)?;
        let rows = rewrite_rows(&batch);
        let logits = self
            .lm_head
            .forward(hidden.select(Axis(0), &rows).view(), &self.encoder.embeddings.token);
        let mut out = Vec::with_capacity(sequences.len());
        let mut k = 0;
        for s in &batch.spans {
            let n = (s.len() - 3) / 2;
            out.push(logits.slice(ndarray::s![k..k + n, ..]).mapv(|v| v.as_f64()));
            k += n;
        }
        Ok(out)
    }
}

impl<F: Float> Parameters<F> for CorrectorNet<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.lm_head.visit(&join(prefix, "lm_head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.lm_head.visit_mut(&join(prefix, "lm_head"), f);
    }
}

impl<F: Float> Trainable<F> for CorrectorNet<F> {
    type Example = CorrectorExample<F>;

    /// Weighted cross-entropy summed over segment-1 positions and divided by
    /// the number of positions.
    fn batch_loss(
        &self,
        batch: &[&CorrectorExample<F>],
        grad: Option<&mut Self>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let packed = Batch::from_sequences(batch.iter().map(|e| &e.sequence))?;
        let targets: Vec<usize> = batch.iter().flat_map(|e| e.targets.iter().copied()).collect();
        let weights: Vec<F> = batch.iter().flat_map(|e| e.weights.iter().copied()).collect();
        let rows = rewrite_rows(&packed);
        if rows.len() != targets.len() || rows.len() != weights.len() {
            return Err(CoinError::ShapeMismatch {
                expected: rows.len(),
                actual: targets.len(),
            });
        }
        let (hidden, cache) = self.encoder.forward_train(&packed, rng)?;
        let selected = hidden.select(Axis(0), &rows);
        let token = &self.encoder.embeddings.token;
        let logits = self.lm_head.forward(selected.view(), token);
        let (loss_sum, mut dlogits) = softmax_cross_entropy(&logits, &targets, &weights);
        let count = rows.len().max(1) as f64;
        if let Some(grad) = grad {
            dlogits *= F::c(1.0 / count);
            let dsel = self.lm_head.backward(
                selected.view(),
                dlogits.view(),
                token,
                &mut grad.lm_head,
                &mut grad.encoder.embeddings.token,
            );
            let mut dhidden = Array2::zeros(hidden.raw_dim());
            for (k, &row) in rows.iter().enumerate() {
                dhidden.row_mut(row).assign(&dsel.row(k));
            }
            self.encoder.backward(&packed, &cache, dhidden, &mut grad.encoder);
        }
        Ok(loss_sum / count)
    }
}

/// A trained corrector with its vocabulary and the strategy it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrector<F> {
    pub vocab: Vocab,
    pub net: CorrectorNet<F>,
    pub strategy: Strategy,
    pub positions: PositionScheme,
}

pub const CORRECTOR_KIND: &str = "corrector";

#[derive(Serialize, Deserialize)]
struct CorrectorMeta {
    encoder: EncoderConfig,
    vocab: Vocab,
    tie_lm_head: bool,
    strategy: Strategy,
    positions: PositionScheme,
}

/// Settings for building a corrector.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorSetup {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub strategy: Strategy,
    pub positions: PositionScheme,
    pub tie_lm_head: bool,
    pub masked_weight: f64,
}

impl CorrectorSetup {
    pub fn from_config(cfg: &CoinConfig) -> Self {
        CorrectorSetup {
            encoder: cfg.encoder.clone(),
            train: cfg.corrector.train.clone(),
            strategy: cfg.strategy(),
            positions: cfg.corrector.positions,
            tie_lm_head: cfg.corrector.tie_lm_head,
            masked_weight: cfg.corrector.masked_weight,
        }
    }
}

impl<F: Float> Corrector<F> {
    pub fn new(vocab: Vocab, setup: &CorrectorSetup) -> Result<Self> {
        let net = CorrectorNet::new(setup.encoder.clone(), vocab.len(), setup.tie_lm_head, setup.train.seed)?;
        Ok(Corrector {
            vocab,
            net,
            strategy: setup.strategy,
            positions: setup.positions,
        })
    }

    pub fn sequence(&self, prepared: &PreparedInput) -> Sequence<F> {
        Sequence {
            tokens: prepared.input.tokens.clone(),
            segments: Some(prepared.input.segments.clone()),
            positions: Some(prepared.positions.clone()),
            channel_offsets: prepared
                .offsets
                .as_ref()
                .map(|o| o.iter().map(|&v| F::c(v)).collect()),
        }
    }

    /// Training example for `pair` under the given flags.
    pub fn example(
        &self,
        pair: &SentencePair,
        ep_flags: &[bool],
        sm_flags: &[bool],
        masked_weight: f64,
    ) -> Result<CorrectorExample<F>> {
        let prepared = self.prepare(pair.source(), ep_flags, sm_flags)?;
        let weights = (0..pair.len())
            .map(|j| {
                if prepared.plan.is_masked(j) {
                    F::c(masked_weight)
                } else {
                    F::one()
                }
            })
            .collect();
        Ok(CorrectorExample {
            sequence: self.sequence(&prepared),
            targets: self.vocab.encode(pair.target()),
            weights,
        })
    }

    pub fn prepare(&self, source: &[char], ep_flags: &[bool], sm_flags: &[bool]) -> Result<PreparedInput> {
        prepare_input(
            &self.vocab,
            self.net.encoder.config.max_len,
            self.positions,
            &self.strategy,
            source,
            ep_flags,
            sm_flags,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_value(CorrectorMeta {
            encoder: self.net.encoder.config.clone(),
            vocab: self.vocab.clone(),
            tie_lm_head: self.net.lm_head.is_tied(),
            strategy: self.strategy,
            positions: self.positions,
        })?;
        encode_checkpoint(CORRECTOR_KIND, meta, &self.net)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, data) = decode_header(bytes)?;
        if header.kind != CORRECTOR_KIND {
            return Err(CoinError::Checkpoint(format!(
                "expected a {CORRECTOR_KIND} checkpoint, found {}",
                header.kind
            )));
        }
        let meta: CorrectorMeta = serde_json::from_value(header.meta.clone())?;
        let setup = CorrectorSetup {
            encoder: meta.encoder,
            train: TrainConfig::default(),
            strategy: meta.strategy,
            positions: meta.positions,
            tie_lm_head: meta.tie_lm_head,
            masked_weight: 1.0,
        };
        let mut c = Corrector::new(meta.vocab, &setup)?;
        load_into(&header, data, &mut c.net)?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }
}

impl<F: Float> RewriteModel for Corrector<F> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.net.encoder.config.max_len
    }

    fn strategy(&self) -> Strategy {
        self.strategy
    }

    fn position_scheme(&self) -> PositionScheme {
        self.positions
    }

    fn rewrite_logits(&self, inputs: &[PreparedInput]) -> Result<Vec<Array2<f64>>> {
        let seqs: Vec<Sequence<F>> = inputs.iter().map(|p| self.sequence(p)).collect();
        let refs: Vec<&Sequence<F>> = seqs.iter().collect();
        self.net.logits(&refs)
    }
}

#[derive(Debug, Clone)]
pub struct CorrectorTraining<F> {
    pub corrector: Corrector<F>,
    pub log: TrainLog,
}

/// Trains a corrector on `pairs` with per-pair indication and mask flags.
pub fn train_corrector_with_flags(
    pairs: &[SentencePair],
    ep_flags: &[Vec<bool>],
    sm_flags: &[Vec<bool>],
    vocab: &Vocab,
    setup: &CorrectorSetup,
) -> Result<CorrectorTraining<f32>> {
    if ep_flags.len() != pairs.len() || sm_flags.len() != pairs.len() {
        return Err(CoinError::ShapeMismatch {
            expected: pairs.len(),
            actual: ep_flags.len().min(sm_flags.len()),
        });
    }
    let mut corrector = Corrector::<f32>::new(vocab.clone(), setup)?;
    let examples = pairs
        .iter()
        .zip(ep_flags.iter().zip(sm_flags))
        .map(|(p, (ep, sm))| corrector.example(p, ep, sm, setup.masked_weight))
        .collect::<Result<Vec<_>>>()?;
    let log = fit(&mut corrector.net, &examples, &setup.train, |epoch, loss| {
        log::info!("corrector epoch {epoch}: loss {loss:.5}");
    })?;
    Ok(CorrectorTraining { corrector, log })
}

/// Flags for each pair from the chosen source.
pub fn training_flags(
    source: FlagSource,
    pairs: &[SentencePair],
    detections: Option<&[DetectionResult]>,
    high_precision: bool,
    cfg: &CoinConfig,
) -> Result<Vec<Vec<bool>>> {
    match source {
        FlagSource::Oracle => Ok(pairs.iter().map(SentencePair::error_mask).collect()),
        FlagSource::OracleNoise => {
            let gold: Vec<Vec<bool>> = pairs.iter().map(SentencePair::error_mask).collect();
            let mut spec = if high_precision { cfg.ep.noise } else { cfg.sm.noise };
            spec.seed = spec.seed.wrapping_add(cfg.seed);
            Ok(inject_corpus_noise(&gold, &spec)?.flags)
        }
        FlagSource::Detector => {
            let d = detections.ok_or_else(|| {
                CoinError::InvalidConfig("flag source \"detector\" needs a trained detector".into())
            })?;
            Ok(d.iter()
                .map(|r| if high_precision { r.high_p.clone() } else { r.high_r.clone() })
                .collect())
        }
    }
}

/// Trains a corrector as configured, deriving flags from `detector` where
/// the config asks for detector flags.
pub fn train_corrector(
    pairs: &[SentencePair],
    detector: Option<(&Detector<f32>, Thresholds)>,
    cfg: &CoinConfig,
) -> Result<CorrectorTraining<f32>> {
    let vocab = match detector {
        Some((d, _)) => d.vocab.clone(),
        None => crate::text::build_vocab(
            &pairs
                .iter()
                .flat_map(|p| [p.source_string(), p.target_string()])
                .collect::<Vec<_>>(),
        ),
    };
    let needs_detector = cfg.ep.train_source == FlagSource::Detector || cfg.sm.flags_source == FlagSource::Detector;
    let detections = match (needs_detector, detector) {
        (true, Some((d, t))) => {
            let texts: Vec<&[char]> = pairs.iter().map(|p| p.source()).collect();
            Some(
                d.score_all(&texts, 64)?
                    .iter()
                    .map(|s| DetectionResult::from_scores(s, t))
                    .collect::<Vec<_>>(),
            )
        }
        _ => None,
    };
    let ep = training_flags(cfg.ep.train_source, pairs, detections.as_deref(), true, cfg)?;
    let sm = training_flags(cfg.sm.flags_source, pairs, detections.as_deref(), false, cfg)?;
    let mut setup = CorrectorSetup::from_config(cfg);
    setup.train.seed = setup.train.seed.wrapping_add(cfg.seed);
    train_corrector_with_flags(pairs, &ep, &sm, &vocab, &setup)
}
