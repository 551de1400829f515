//! Fixtures shared by the benchmarks in `benches/`.

use ltseg_core::{generate_synthetic, Dataset, SynthConfig};

/// The long-tail benchmark dataset: 12 classes, Zipf skew 1.5.
pub fn long_tail_dataset(num_sequences: usize) -> Dataset {
    generate_synthetic(&SynthConfig {
        num_classes: 12,
        feature_dim: 16,
        num_sequences,
        class_skew: 1.5,
        noise: 1.0,
        mean_scale: 0.5,
        ..Default::default()
    })
    .expect("benchmark config is valid")
}
