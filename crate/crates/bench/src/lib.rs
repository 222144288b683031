//! Shared fixtures for the criterion benchmarks under `benches/`.

use rulekit_core::synthetic::{SyntheticBenchmark, SyntheticConfig};

/// The default synthetic benchmark, generated once per bench binary.
pub fn synthetic() -> SyntheticBenchmark {
    SyntheticBenchmark::generate(&SyntheticConfig::default()).expect("synthetic benchmark")
}
