use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::metrics::{sentence_metrics, EvalReport, MetricLevel};
use super::noise::{inject_corpus_noise, NoiseSpec};
use super::table::Table;
use crate::config::{CoinConfig, FlagSource};
use crate::corrector::{correct_with_flags, train_corrector_with_flags, Corrector, CorrectorSetup, Strategy};
use crate::detector::{calibrate, roc_auc, train_detector, CalibrationReport, DetectionResult, Detector};
use crate::error::{CoinError, Result};
use crate::indication::{FuzzyParams, KernelFamily};
use crate::text::{build_vocab, SentencePair, SyntheticTask, Vocab};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `(cor_pct, fp_count_pct)` grid of the preliminary noise experiments.
pub const PRELIM_CELLS: [(f64, f64); 7] = [
    (100.0, 0.0),
    (90.0, 0.0),
    (80.0, 0.0),
    (70.0, 0.0),
    (90.0, 10.0),
    (80.0, 20.0),
    (70.0, 30.0),
];

pub const MASK_LENGTHS: [usize; 5] = [1, 3, 5, 7, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    PrelimEp,
    PrelimSm,
    Ablation,
    FiFamilySweep,
    MaskLengthSweep,
    EndToEnd,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::PrelimEp,
        ExperimentId::PrelimSm,
        ExperimentId::Ablation,
        ExperimentId::FiFamilySweep,
        ExperimentId::MaskLengthSweep,
        ExperimentId::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::PrelimEp => "prelim_ep",
            ExperimentId::PrelimSm => "prelim_sm",
            ExperimentId::Ablation => "ablation",
            ExperimentId::FiFamilySweep => "fi_family_sweep",
            ExperimentId::MaskLengthSweep => "mask_length_sweep",
            ExperimentId::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = CoinError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| CoinError::UnknownExperiment(s.to_string()))
    }
}

/// Median of `values`; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Summary {
    fn median_of(reports: &[EvalReport]) -> Self {
        let pick = |f: fn(&EvalReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
        Summary {
            precision: pick(|r| r.precision),
            recall: pick(|r| r.recall),
            f1: pick(|r| r.f1),
        }
    }
}

/// One table cell: per-seed reports and their medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub params: serde_json::Value,
    pub correction: Vec<EvalReport>,
    pub detection: Vec<EvalReport>,
    pub median: Summary,
    pub median_detection: Summary,
}

impl CellResult {
    fn new(label: impl Into<String>, params: serde_json::Value, correction: Vec<EvalReport>, detection: Vec<EvalReport>) -> Self {
        CellResult {
            label: label.into(),
            params,
            median: Summary::median_of(&correction),
            median_detection: Summary::median_of(&detection),
            correction,
            detection,
        }
    }

    pub fn f1_per_seed(&self) -> Vec<f64> {
        self.correction.iter().map(|r| r.f1).collect()
    }
}

/// Published values shown next to the measured ones, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub caption: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub calibrations: Vec<CalibrationReport>,
    /// Derived scalars, e.g. `median_fp_drop` for the noise grids.
    pub summary: BTreeMap<String, f64>,
    pub reference: Option<Reference>,
    pub table: String,
}

impl ReportBundle {
    pub fn cell(&self, label: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.label == label)
    }

    /// Distinct degraded flags across every report and calibration.
    pub fn degraded_flags(&self) -> Vec<String> {
        let mut flags: Vec<String> = self
            .cells
            .iter()
            .flat_map(|c| c.correction.iter().chain(&c.detection))
            .flat_map(|r| r.degraded_flags.iter().cloned())
            .chain(self.calibrations.iter().flat_map(|c| c.degraded_flags.iter().cloned()))
            .collect();
        flags.sort();
        flags.dedup();
        flags
    }

    pub fn is_degraded(&self) -> bool {
        !self.degraded_flags().is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<id>.json` and `<id>.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CoinError::io(dir, e))?;
        let json = dir.join(format!("{}.json", self.experiment));
        let txt = dir.join(format!("{}.txt", self.experiment));
        std::fs::write(&json, self.to_json()?).map_err(|e| CoinError::io(&json, e))?;
        std::fs::write(&txt, &self.table).map_err(|e| CoinError::io(&txt, e))?;
        Ok((json, txt))
    }
}

/// A trained detector with its calibration and cached detections.
#[derive(Debug, Clone)]
pub struct DetectorArtifacts {
    pub detector: Detector<f32>,
    pub calibration: CalibrationReport,
    pub train: Vec<DetectionResult>,
    pub test: Vec<DetectionResult>,
    pub test_auc: Option<f64>,
}

/// Everything derived from one seed, built lazily and reused across experiments.
#[derive(Debug)]
pub struct SeedContext {
    pub seed: u64,
    pub task: SyntheticTask,
    pub vocab: Vocab,
    detector: Option<DetectorArtifacts>,
    correctors: BTreeMap<String, Corrector<f32>>,
    pub timings: BTreeMap<String, Duration>,
}

const DATA_KEY: &str = "data";
const DETECTOR_KEY: &str = "detector";

fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedContext {
    pub fn new(cfg: &CoinConfig, seed: u64) -> Result<Self> {
        let start = Instant::now();
        let task = SyntheticTask::generate(&cfg.data, derive_seed(cfg.seed, seed))?;
        let vocab = build_vocab(&[task.language.symbols().iter().collect::<String>()]);
        let mut timings = BTreeMap::new();
        timings.insert(DATA_KEY.to_string(), start.elapsed());
        Ok(SeedContext {
            seed,
            task,
            vocab,
            detector: None,
            correctors: BTreeMap::new(),
            timings,
        })
    }

    pub fn detector(&mut self, cfg: &CoinConfig) -> Result<&DetectorArtifacts> {
        if self.detector.is_none() {
            let start = Instant::now();
            let mut train = cfg.detector.train.clone();
            train.seed = derive_seed(train.seed, self.seed.wrapping_add(1));
            let trained = train_detector(&self.task.train, &self.vocab, &cfg.encoder, &train)?;
            let detector = trained.detector;
            let score = |pairs: &[SentencePair]| {
                let texts: Vec<&[char]> = pairs.iter().map(|p| p.source()).collect();
                detector.score_all(&texts, 64)
            };
            let dev_scores = score(&self.task.dev)?;
            let dev_labels: Vec<Vec<bool>> = self.task.dev.iter().map(SentencePair::error_mask).collect();
            let calibration = calibrate(&dev_scores, &dev_labels, cfg.detector.calibration_target)?;
            let t = calibration.thresholds();
            let detect = |scores: Vec<_>| -> Vec<DetectionResult> {
                scores.iter().map(|s| DetectionResult::from_scores(s, t)).collect()
            };
            let test_scores = score(&self.task.test)?;
            let flat_scores: Vec<f64> = test_scores.iter().flat_map(|s| s.values().to_vec()).collect();
            let flat_labels: Vec<bool> = self.task.test.iter().flat_map(SentencePair::error_mask).collect();
            let test_auc = roc_auc(&flat_scores, &flat_labels);
            log::info!(
                "seed {}: detector p={:.4} r={:.4} test AUC {:?}",
                self.seed,
                t.p,
                t.r,
                test_auc
            );
            let artifacts = DetectorArtifacts {
                train: detect(score(&self.task.train)?),
                test: detect(test_scores),
                detector,
                calibration,
                test_auc,
            };
            self.detector = Some(artifacts);
            self.timings.insert(DETECTOR_KEY.to_string(), start.elapsed());
        }
        Ok(self.detector.as_ref().expect("detector built above"))
    }

    fn flags(&mut self, cfg: &CoinConfig, source: FlagSource, high_precision: bool) -> Result<Vec<Vec<bool>>> {
        match source {
            FlagSource::Oracle => Ok(self.task.train.iter().map(SentencePair::error_mask).collect()),
            FlagSource::OracleNoise => {
                let gold: Vec<Vec<bool>> = self.task.train.iter().map(SentencePair::error_mask).collect();
                let mut spec = if high_precision { cfg.ep.noise } else { cfg.sm.noise };
                spec.seed = derive_seed(spec.seed, self.seed);
                Ok(inject_corpus_noise(&gold, &spec)?.flags)
            }
            FlagSource::Detector => {
                let d = self.detector(cfg)?;
                Ok(d.train
                    .iter()
                    .map(|r| if high_precision { r.high_p.clone() } else { r.high_r.clone() })
                    .collect())
            }
        }
    }

    pub fn corrector(&mut self, cfg: &CoinConfig, variant: &Variant) -> Result<&Corrector<f32>> {
        let key = variant.key();
        if !self.correctors.contains_key(&key) {
            let start = Instant::now();
            let ep = match variant.strategy.ep {
                Some(_) => self.flags(cfg, variant.ep_source, true)?,
                None => self.task.train.iter().map(|p| vec![false; p.len()]).collect(),
            };
            let sm = match variant.strategy.sm_window {
                Some(_) => self.flags(cfg, variant.sm_source, false)?,
                None => self.task.train.iter().map(|p| vec![false; p.len()]).collect(),
            };
            let mut setup = CorrectorSetup::from_config(cfg);
            setup.strategy = variant.strategy;
            setup.train.seed = derive_seed(setup.train.seed, self.seed.wrapping_add(2));
            log::info!("seed {}: training corrector {key}", self.seed);
            let trained = train_corrector_with_flags(&self.task.train, &ep, &sm, &self.vocab, &setup)?;
            self.correctors.insert(key.clone(), trained.corrector);
            self.timings.insert(format!("corrector:{key}"), start.elapsed());
        }
        Ok(&self.correctors[&key])
    }

    /// Wall time spent building the named artifacts.
    pub fn build_time(&self, keys: &[String]) -> Duration {
        keys.iter().filter_map(|k| self.timings.get(k)).sum()
    }
}

/// A corrector configuration: strategy plus training flag sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub strategy: Strategy,
    pub ep_source: FlagSource,
    pub sm_source: FlagSource,
}

impl Variant {
    /// Cache key; the label is excluded so identical settings share a model.
    pub fn key(&self) -> String {
        serde_json::to_string(&(&self.strategy, self.ep_source, self.sm_source)).unwrap_or_default()
    }

    pub fn from_config(label: &str, cfg: &CoinConfig) -> Self {
        Variant {
            label: label.to_string(),
            strategy: cfg.strategy(),
            ep_source: cfg.ep.train_source,
            sm_source: cfg.sm.flags_source,
        }
    }

    pub fn with(label: &str, cfg: &CoinConfig, ep: Option<FuzzyParams>, sm: Option<usize>) -> Self {
        let mut v = Variant::from_config(label, cfg);
        v.strategy.ep = ep;
        v.strategy.sm_window = sm;
        v
    }
}

/// How test-time flags are produced.
#[derive(Debug, Clone, Copy)]
enum EvalFlags {
    Detector,
    Injected(NoiseSpec),
}

/// Shared state for running several experiments over the same seeds.
#[derive(Debug)]
pub struct ExperimentRunner {
    pub cfg: CoinConfig,
    pub contexts: Vec<SeedContext>,
    attributed: BTreeMap<ExperimentId, Duration>,
}

impl ExperimentRunner {
    pub fn new(cfg: CoinConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.experiment.seeds.is_empty() {
            return Err(CoinError::InvalidConfig("experiment.seeds is empty".into()));
        }
        let contexts = cfg
            .experiment
            .seeds
            .iter()
            .map(|&s| SeedContext::new(&cfg, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentRunner {
            cfg,
            contexts,
            attributed: BTreeMap::new(),
        })
    }

    /// Wall time attributable to the last run of `id`: the build time of every
    /// artifact it used, cached or not, plus its evaluation time.
    pub fn attributed_time(&self, id: ExperimentId) -> Option<Duration> {
        self.attributed.get(&id).copied()
    }

    pub fn run(&mut self, id: ExperimentId) -> Result<ReportBundle> {
        let cached: Vec<BTreeMap<String, Duration>> = self.contexts.iter().map(|c| c.timings.clone()).collect();
        let start = Instant::now();
        let mut used: Vec<Vec<String>> = vec![Vec::new(); self.contexts.len()];
        let bundle = match id {
            ExperimentId::PrelimEp | ExperimentId::PrelimSm => self.prelim(id, &mut used)?,
            ExperimentId::Ablation => self.ablation(&mut used)?,
            ExperimentId::FiFamilySweep => self.fi_family_sweep(&mut used)?,
            ExperimentId::MaskLengthSweep => self.mask_length_sweep(&mut used)?,
            ExperimentId::EndToEnd => self.end_to_end(&mut used)?,
        };
        // Artifacts built during this run are inside the elapsed time; reused
        // ones contribute their recorded build time.
        let mut total = start.elapsed();
        for (before, keys) in cached.iter().zip(&mut used) {
            keys.push(DATA_KEY.to_string());
            keys.sort();
            keys.dedup();
            total += keys.iter().filter_map(|k| before.get(k)).sum::<Duration>();
        }
        self.attributed.insert(id, total);
        Ok(bundle)
    }

    fn finish(
        &self,
        id: ExperimentId,
        cells: Vec<CellResult>,
        summary: BTreeMap<String, f64>,
        reference: Option<Reference>,
        table: Table,
        with_calibrations: bool,
    ) -> ReportBundle {
        let calibrations = if with_calibrations {
            self.contexts
                .iter()
                .filter_map(|c| c.detector.as_ref().map(|d| d.calibration.clone()))
                .collect()
        } else {
            Vec::new()
        };
        let fingerprint = self.cfg.fingerprint();
        let cells = cells
            .into_iter()
            .map(|mut c| {
                for r in c.correction.iter_mut().chain(c.detection.iter_mut()) {
                    r.fingerprint = Some(fingerprint.clone());
                }
                c
            })
            .collect();
        ReportBundle {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: id,
            fingerprint,
            seeds: self.cfg.experiment.seeds.clone(),
            cells,
            calibrations,
            summary,
            reference,
            table: table.to_string(),
        }
    }

    /// Trains (or reuses) `variant` for every seed and evaluates it on the test split.
    fn evaluate(
        &mut self,
        variant: &Variant,
        flags: &[EvalFlags],
        used: &mut [Vec<String>],
    ) -> Result<Vec<(Vec<EvalReport>, Vec<EvalReport>)>> {
        let cfg = self.cfg.clone();
        let mut per_cell = vec![(Vec::new(), Vec::new()); flags.len()];
        for (ctx, used) in self.contexts.iter_mut().zip(used.iter_mut()) {
            used.push(format!("corrector:{}", variant.key()));
            let needs_detector = flags.iter().any(|f| matches!(f, EvalFlags::Detector))
                || (variant.strategy.ep.is_some() && variant.ep_source == FlagSource::Detector)
                || (variant.strategy.sm_window.is_some() && variant.sm_source == FlagSource::Detector);
            if needs_detector {
                ctx.detector(&cfg)?;
                used.push(DETECTOR_KEY.to_string());
            }
            ctx.corrector(&cfg, variant)?;
            let corrector = &ctx.correctors[&variant.key()];
            let gold: Vec<Vec<bool>> = ctx.task.test.iter().map(SentencePair::error_mask).collect();
            let sources: Vec<&[char]> = ctx.task.test.iter().map(|p| p.source()).collect();
            let targets: Vec<&[char]> = ctx.task.test.iter().map(|p| p.target()).collect();
            for (cell, f) in per_cell.iter_mut().zip(flags) {
                let (ep, sm) = match f {
                    EvalFlags::Detector => {
                        let d = ctx.detector.as_ref().expect("detector built above");
                        (
                            d.test.iter().map(|r| r.high_p.clone()).collect::<Vec<_>>(),
                            d.test.iter().map(|r| r.high_r.clone()).collect::<Vec<_>>(),
                        )
                    }
                    EvalFlags::Injected(spec) => {
                        let mut spec = *spec;
                        spec.seed = derive_seed(spec.seed, ctx.seed.wrapping_add(3));
                        let flags = inject_corpus_noise(&gold, &spec)?.flags;
                        (flags.clone(), flags)
                    }
                };
                let outputs = correct_with_flags(
                    corrector,
                    &sources,
                    &ep,
                    &sm,
                    &corrector.strategy,
                    cfg.inference.mode,
                )?;
                let predictions: Vec<&[char]> = outputs.iter().map(|o| o.prediction.as_slice()).collect();
                cell.0.push(sentence_metrics(&sources, &predictions, &targets, MetricLevel::Correction)?);
                cell.1.push(sentence_metrics(&sources, &predictions, &targets, MetricLevel::Detection)?);
            }
        }
        Ok(per_cell)
    }

    fn prelim(&mut self, id: ExperimentId, used: &mut [Vec<String>]) -> Result<ReportBundle> {
        let cfg = &self.cfg;
        let (name, strategy, reference) = match id {
            ExperimentId::PrelimEp => (
                "EP",
                Strategy {
                    ep: Some(cfg.ep.params),
                    ep_both_segments: cfg.ep.both_segments,
                    sm_window: None,
                },
                [98.1, 96.1, 92.6, 91.4, 95.4, 91.7, 89.2],
            ),
            _ => (
                "SM",
                Strategy {
                    ep: None,
                    ep_both_segments: false,
                    sm_window: Some(cfg.sm.window_length),
                },
                [95.5, 91.7, 89.3, 86.9, 91.6, 88.8, 86.4],
            ),
        };
        let oracle = |s: FlagSource| if s == FlagSource::Detector { FlagSource::Oracle } else { s };
        let variant = Variant {
            label: format!("{name}-only"),
            strategy,
            ep_source: oracle(cfg.ep.train_source),
            sm_source: oracle(cfg.sm.flags_source),
        };
        let noise_seed = cfg.sm.noise.seed;
        let flags: Vec<EvalFlags> = PRELIM_CELLS
            .iter()
            .map(|&(c, f)| {
                EvalFlags::Injected(NoiseSpec {
                    cor_pct: c,
                    fp_count_pct: f,
                    seed: noise_seed,
                })
            })
            .collect();
        let results = self.evaluate(&variant, &flags, used)?;
        let cells: Vec<CellResult> = PRELIM_CELLS
            .iter()
            .zip(results)
            .map(|(&(c, f), (corr, det))| {
                CellResult::new(
                    format!("cor{c}_fp{f}"),
                    serde_json::json!({"cor_pct": c, "fp_count_pct": f}),
                    corr,
                    det,
                )
            })
            .collect();

        // Per seed: mean F1 lost when FP flags are added at matched Cor.
        let n_seeds = self.contexts.len();
        let drops: Vec<f64> = (0..n_seeds)
            .map(|s| (1..4).map(|k| cells[k].correction[s].f1 - cells[k + 3].correction[s].f1).sum::<f64>() / 3.0)
            .collect();
        let mut summary = BTreeMap::new();
        summary.insert("median_fp_drop".to_string(), median(&drops));

        let mut header = vec![name.to_string()];
        header.extend(PRELIM_CELLS.iter().map(|_| String::new()));
        let mut table = Table::new(
            format!("{} (correction-level F1, median of {} seeds; reference row in percent)", variant.label, n_seeds),
            header,
        );
        table.row(std::iter::once("Cor".to_string()).chain(PRELIM_CELLS.iter().map(|c| format!("{}", c.0))));
        table.row(std::iter::once("Wr".to_string()).chain(PRELIM_CELLS.iter().map(|c| format!("{}", c.1))));
        table.row(std::iter::once("F1".to_string()).chain(cells.iter().map(|c| pct(c.median.f1))));
        for (s, seed) in self.cfg.experiment.seeds.iter().enumerate() {
            table.row(
                std::iter::once(format!("F1 seed {seed}")).chain(cells.iter().map(|c| pct(c.correction[s].f1))),
            );
        }
        table.row(std::iter::once("ref F1".to_string()).chain(reference.iter().map(|v| format!("{v:.1}"))));
        let reference = Reference {
            caption: format!("{name} noise grid, F1"),
            columns: cells.iter().map(|c| c.label.clone()).collect(),
            rows: vec![("F1".to_string(), reference.to_vec())],
        };
        Ok(self.finish(id, cells, summary, Some(reference), table, false))
    }

    fn compare_variants(
        &mut self,
        id: ExperimentId,
        variants: Vec<Variant>,
        params: Vec<serde_json::Value>,
        reference: Reference,
        used: &mut [Vec<String>],
    ) -> Result<ReportBundle> {
        let mut cells = Vec::with_capacity(variants.len());
        for (v, p) in variants.iter().zip(params) {
            let (corr, det) = self.evaluate(v, &[EvalFlags::Detector], used)?.remove(0);
            cells.push(CellResult::new(v.label.clone(), p, corr, det));
        }
        let base = cells[0].median;
        let mut table = Table::new(
            format!(
                "{id} (correction level, median of {} seeds, percent; deltas against the first row)",
                self.contexts.len()
            ),
            ["setting", "P", "R", "F1", "dP", "dR", "dF1", "ref P", "ref R", "ref F1"],
        );
        for (i, c) in cells.iter().enumerate() {
            let m = c.median;
            let mut row = vec![
                c.label.clone(),
                pct(m.precision),
                pct(m.recall),
                pct(m.f1),
                signed(m.precision - base.precision),
                signed(m.recall - base.recall),
                signed(m.f1 - base.f1),
            ];
            match reference.rows.get(i) {
                Some((_, v)) => row.extend(v.iter().map(|x| format!("{x:.1}"))),
                None => row.extend(["-", "-", "-"].map(String::from)),
            }
            table.row(row);
        }
        Ok(self.finish(id, cells, BTreeMap::new(), Some(reference), table, true))
    }

    fn ablation(&mut self, used: &mut [Vec<String>]) -> Result<ReportBundle> {
        let cfg = &self.cfg;
        let ep = cfg.ep.params;
        let dirac = FuzzyParams {
            family: KernelFamily::Dirac,
            ..ep
        };
        let l = cfg.sm.window_length;
        let variants = vec![
            Variant::with("full", cfg, Some(ep), Some(l)),
            Variant::with("w/o FI", cfg, Some(dirac), Some(l)),
            Variant::with("w/o EP", cfg, None, Some(l)),
            Variant::with("w/o SM", cfg, Some(ep), None),
            Variant::with("w/o EP&SM", cfg, None, None),
        ];
        let params = variants.iter().map(|v| serde_json::to_value(v.strategy).unwrap_or_default()).collect();
        let reference = Reference {
            caption: "ablation, precision / recall / F1".into(),
            columns: vec!["P".into(), "R".into(), "F1".into()],
            rows: vec![
                ("full".into(), vec![93.5, 96.1, 94.8]),
                ("w/o FI".into(), vec![93.0, 93.7, 93.4]),
                ("w/o EP".into(), vec![91.6, 94.9, 93.2]),
                ("w/o SM".into(), vec![92.0, 94.1, 93.0]),
                ("w/o EP&SM".into(), vec![86.2, 97.7, 91.5]),
            ],
        };
        self.compare_variants(ExperimentId::Ablation, variants, params, reference, used)
    }

    fn fi_family_sweep(&mut self, used: &mut [Vec<String>]) -> Result<ReportBundle> {
        let cfg = &self.cfg;
        let l = cfg.sm.window_length;
        let order = [
            KernelFamily::Gaussian,
            KernelFamily::Triangular,
            KernelFamily::Uniform,
            KernelFamily::Dirac,
        ];
        let variants: Vec<Variant> = order
            .iter()
            .map(|&f| {
                Variant::with(
                    f.name(),
                    cfg,
                    Some(FuzzyParams {
                        family: f,
                        ..cfg.ep.params
                    }),
                    Some(l),
                )
            })
            .collect();
        let params = order.iter().map(|f| serde_json::json!({"family": f})).collect();
        let reference = Reference {
            caption: "indication kernel family, precision / recall / F1".into(),
            columns: vec!["P".into(), "R".into(), "F1".into()],
            rows: vec![
                ("gaussian".into(), vec![93.5, 96.1, 94.8]),
                ("triangular".into(), vec![93.1, 94.9, 94.0]),
                ("uniform".into(), vec![91.7, 95.7, 93.7]),
                ("dirac".into(), vec![93.0, 93.7, 93.4]),
            ],
        };
        self.compare_variants(ExperimentId::FiFamilySweep, variants, params, reference, used)
    }

    fn mask_length_sweep(&mut self, used: &mut [Vec<String>]) -> Result<ReportBundle> {
        let cfg = &self.cfg;
        let ep = cfg.ep.enabled.then_some(cfg.ep.params);
        let variants: Vec<Variant> = MASK_LENGTHS
            .iter()
            .map(|&l| Variant::with(&format!("L={l}"), cfg, ep, Some(l)))
            .collect();
        let params = MASK_LENGTHS.iter().map(|l| serde_json::json!({"window_length": l})).collect();
        let reference = Reference {
            caption: "mask window length, F1".into(),
            columns: vec!["F1".into()],
            rows: [92.0, 93.2, 94.8, 94.0, 93.9]
                .iter()
                .zip(MASK_LENGTHS)
                .map(|(v, l)| (format!("L={l}"), vec![*v]))
                .collect(),
        };
        let mut bundle = self.compare_variants(ExperimentId::MaskLengthSweep, variants, params, reference.clone(), used)?;
        let mut table = Table::new(
            format!(
                "mask_length_sweep (correction-level F1, median of {} seeds, percent)",
                self.contexts.len()
            ),
            ["L", "P", "R", "F1", "ref F1"],
        );
        for (c, (_, r)) in bundle.cells.iter().zip(&reference.rows) {
            table.row([
                c.label.trim_start_matches("L=").to_string(),
                pct(c.median.precision),
                pct(c.median.recall),
                pct(c.median.f1),
                format!("{:.1}", r[0]),
            ]);
        }
        bundle.table = table.to_string();
        Ok(bundle)
    }

    fn end_to_end(&mut self, used: &mut [Vec<String>]) -> Result<ReportBundle> {
        let variant = Variant::from_config("coin", &self.cfg);
        let (corr, det) = self.evaluate(&variant, &[EvalFlags::Detector], used)?.remove(0);
        let cell = CellResult::new("coin", serde_json::to_value(variant.strategy)?, corr, det);
        let mut table = Table::new(
            format!("end_to_end (percent; median of {} seeds)", self.contexts.len()),
            ["seed", "level", "P", "R", "F1", "TP", "FP", "FN", "det p", "det r", "AUC"],
        );
        let mut summary = BTreeMap::new();
        for (s, ctx) in self.contexts.iter().enumerate() {
            let d = ctx.detector.as_ref().expect("detector built during evaluation");
            for r in [&cell.correction[s], &cell.detection[s]] {
                table.row([
                    ctx.seed.to_string(),
                    format!("{:?}", r.level).to_lowercase(),
                    pct(r.precision),
                    pct(r.recall),
                    pct(r.f1),
                    r.tp.to_string(),
                    r.fp.to_string(),
                    r.fn_.to_string(),
                    format!("{:.4}", d.calibration.p),
                    format!("{:.4}", d.calibration.r),
                    d.test_auc.map_or("-".into(), |a| format!("{a:.4}")),
                ]);
            }
        }
        for (level, m) in [("correction", cell.median), ("detection", cell.median_detection)] {
            table.row([
                "median".into(),
                level.into(),
                pct(m.precision),
                pct(m.recall),
                pct(m.f1),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
        summary.insert("median_correction_f1".into(), cell.median.f1);
        summary.insert("median_detection_f1".into(), cell.median_detection.f1);
        Ok(self.finish(ExperimentId::EndToEnd, vec![cell], summary, None, table, true))
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn signed(x: f64) -> String {
    format!("{:+.1}", 100.0 * x)
}

/// Runs one experiment from scratch.
pub fn run_experiment(id: &str, cfg: &CoinConfig) -> Result<ReportBundle> {
    let id: ExperimentId = id.parse()?;
    ExperimentRunner::new(cfg.clone())?.run(id)
}
