//! Shared fixtures for the pipeline benchmarks. The interesting code lives
//! in `benches/`.

use czsl_core::data::{synth_dataset, SynthConfig};
use czsl_core::Dataset;

/// A small but non-trivial dataset: enough classes and rows that the hot
/// paths dominate setup noise.
pub fn bench_dataset() -> Dataset {
    synth_dataset(
        "bench",
        &SynthConfig {
            num_classes: 12,
            rows_per_class: 50,
            feature_dim: 32,
            attribute_dim: 16,
            noise: 0.1,
        },
        99,
    )
    .expect("fixture dataset")
}
