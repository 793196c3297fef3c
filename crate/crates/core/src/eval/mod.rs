//! Sentence-level metrics, detection-noise injection and experiment drivers.

mod experiment;
mod metrics;
mod noise;
mod table;

pub use experiment::{
    median, run_experiment, CellResult, ExperimentId, ExperimentRunner, Reference, ReportBundle, SeedContext,
    Summary, Variant, PRELIM_CELLS, REPORT_SCHEMA_VERSION,
};
pub use metrics::{sentence_metrics, EvalReport, MetricLevel};
pub use noise::{inject_corpus_noise, inject_detection_noise, NoiseOutcome, NoiseSpec};
pub use table::Table;
