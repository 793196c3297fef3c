//! Detector-corrector spelling correction.
//!
//! A character-level detector scores each position, two thresholds turn
//! those scores into a high-precision and a high-recall flag set, and a
//! corrector consumes both: high-precision flags become a fuzzy per-position
//! offset added to the source embeddings, high-recall flags pick windows to
//! mask in a second copy of the sentence that the corrector rewrites.
//!
//! Modules:
//! - [`text`]: vocabulary, sentence pairs, confusion sets, synthetic data
//! - [`nn`]: transformer encoder, heads, optimizer, checkpoints, grad checks
//! - [`detector`]: scoring, thresholding, training, calibration
//! - [`indication`]: fuzzy error-position embeddings
//! - [`masking`]: selective mask plans and corrector input layout
//! - [`corrector`]: corrector model, training, end-to-end correction
//! - [`eval`]: sentence-level metrics, detection noise, experiment drivers

pub mod config;
pub mod corrector;
pub mod detector;
pub mod error;
pub mod eval;
pub mod indication;
pub mod masking;
pub mod nn;
pub mod text;

pub use config::CoinConfig;
pub use corrector::{correct, CorrectionOutput, Corrector, InferenceMode, Pipeline};
pub use detector::{calibrate, threshold, DetectionResult, DetectionScores, Detector, Thresholds};
pub use error::{CoinError, Result};
pub use eval::{sentence_metrics, EvalReport, MetricLevel};
pub use indication::{fuzzy_embedding, kernel, FuzzyEmbedding, FuzzyParams, KernelFamily};
pub use masking::{build_input, plan_mask, CorrectorInput, MaskPlan};
pub use text::{SentencePair, Vocab};
