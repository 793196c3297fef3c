//! Fixtures shared by the criterion benchmarks.

use coin_core::nn::EncoderConfig;
use coin_core::text::{SynthConfig, SyntheticTask};

/// A small synthetic task for benchmarking.
pub fn bench_task(n: usize, seed: u64) -> SyntheticTask {
    let cfg = SynthConfig {
        n_train: n,
        n_dev: n / 10 + 1,
        n_test: n / 10 + 1,
        ..SynthConfig::default()
    };
    SyntheticTask::generate(&cfg, seed).expect("default synthetic config is valid")
}

pub fn bench_encoder() -> EncoderConfig {
    EncoderConfig::default()
}
