//! The JSON configuration shared by every CLI subcommand and experiment.
//!
//! Every field has a default, so `{}` is a valid configuration. Keys follow
//! the module layout: `encoder.*`, `detector.*`, `corrector.*`, `ep.*`,
//! `sm.*`, `inference.*`, `data.*`, `experiment.*`, `artifacts.*`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corrector::{InferenceMode, Strategy};
use crate::error::{CoinError, Result};
use crate::eval::NoiseSpec;
use crate::indication::FuzzyParams;
use crate::masking::PositionScheme;
use crate::nn::{EncoderConfig, TrainConfig};
use crate::text::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoinConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub detector: DetectorSection,
    pub corrector: CorrectorSection,
    pub ep: EpSection,
    pub sm: SmSection,
    pub inference: InferenceSection,
    pub data: SynthConfig,
    pub experiment: ExperimentSection,
    pub artifacts: ArtifactPaths,
}

impl Default for CoinConfig {
    fn default() -> Self {
        CoinConfig {
            seed: 0,
            encoder: EncoderConfig::default(),
            detector: DetectorSection::default(),
            corrector: CorrectorSection::default(),
            ep: EpSection::default(),
            sm: SmSection::default(),
            inference: InferenceSection::default(),
            data: SynthConfig::default(),
            experiment: ExperimentSection::default(),
            artifacts: ArtifactPaths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    pub train: TrainConfig,
    /// Character-level precision/recall target for the two thresholds.
    pub calibration_target: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            train: TrainConfig {
                epochs: 12,
                batch_size: 32,
                lr: 3e-3,
                weight_decay: 0.5,
                ..TrainConfig::default()
            },
            calibration_target: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectorSection {
    pub train: TrainConfig,
    /// Loss multiplier on masked segment-1 positions.
    pub masked_weight: f64,
    pub tie_lm_head: bool,
    pub positions: PositionScheme,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        CorrectorSection {
            train: TrainConfig {
                epochs: 36,
                batch_size: 32,
                lr: 4e-3,
                ..TrainConfig::default()
            },
            masked_weight: 3.0,
            tie_lm_head: true,
            positions: PositionScheme::Absolute,
        }
    }
}

/// Where detection flags come from while building corrector training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlagSource {
    #[serde(rename = "detector")]
    Detector,
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "oracle+noise")]
    OracleNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub params: FuzzyParams,
    /// Also add the indication to the aligned positions of the rewritten segment.
    pub both_segments: bool,
    /// Flag source for the indication during corrector training.
    pub train_source: FlagSource,
    /// Noise applied to gold flags when `train_source` is `oracle+noise`.
    pub noise: NoiseSpec,
}

impl Default for EpSection {
    fn default() -> Self {
        EpSection {
            enabled: true,
            params: FuzzyParams::default(),
            both_segments: false,
            train_source: FlagSource::OracleNoise,
            noise: NoiseSpec {
                cor_pct: 90.0,
                fp_count_pct: 5.0,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmSection {
    pub enabled: bool,
    pub window_length: usize,
    /// Flag source for mask plans during corrector training.
    pub flags_source: FlagSource,
    /// Noise applied to gold flags when `flags_source` is `oracle+noise`.
    pub noise: NoiseSpec,
}

impl Default for SmSection {
    fn default() -> Self {
        SmSection {
            enabled: true,
            window_length: 5,
            flags_source: FlagSource::OracleNoise,
            noise: NoiseSpec {
                cor_pct: 100.0,
                fp_count_pct: 50.0,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct InferenceSection {
    pub mode: InferenceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    /// Exit non-zero when a report carries a degraded flag.
    pub strict: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seeds: vec![0, 1, 2],
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ArtifactPaths {
    pub detector: Option<PathBuf>,
    pub corrector: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
}

impl CoinConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoinError::io(path, e))?;
        let cfg: CoinConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.ep.params.validate()?;
        if self.sm.window_length == 0 || self.sm.window_length % 2 == 0 {
            return Err(CoinError::InvalidConfig(format!(
                "sm.window_length must be odd, got {}",
                self.sm.window_length
            )));
        }
        if !(0.0..=1.0).contains(&self.detector.calibration_target) {
            return Err(CoinError::InvalidConfig("detector.calibration_target outside [0, 1]".into()));
        }
        self.ep.noise.validate()?;
        self.sm.noise.validate()?;
        Ok(())
    }

    /// The strategy a corrector trained with this config uses.
    pub fn strategy(&self) -> Strategy {
        Strategy {
            ep: self.ep.enabled.then_some(self.ep.params),
            ep_both_segments: self.ep.both_segments,
            sm_window: self.sm.enabled.then_some(self.sm.window_length),
        }
    }

    /// Short stable hash of the serialized config, used to tag reports.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_default() {
        let cfg: CoinConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, CoinConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn dotted_keys_from_module_sections() {
        let cfg: CoinConfig = serde_json::from_str(
            r#"{"ep": {"family": "triangular", "delta": 2.0, "step": 0.5, "theta": 0.2, "window": 3},
                "sm": {"window_length": 7, "flags_source": "oracle+noise"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.ep.params.family, crate::indication::KernelFamily::Triangular);
        assert_eq!(cfg.ep.params.window, 3);
        assert_eq!(cfg.sm.window_length, 7);
        assert_eq!(cfg.sm.flags_source, FlagSource::OracleNoise);
    }

    #[test]
    fn even_window_is_invalid() {
        let mut cfg = CoinConfig::default();
        cfg.sm.window_length = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = CoinConfig::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 9;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
