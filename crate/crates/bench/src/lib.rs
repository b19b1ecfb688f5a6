//! Benchmark fixtures.

use mkpca_core::{synth_gaussian_cdf_process, FunctionalDataset, SynthesisConfig};

/// A synthetic CDF dataset with `n` units on `t` time points.
pub fn dataset(n: usize, t: usize) -> FunctionalDataset {
    let cfg = SynthesisConfig {
        n_units: n,
        time_points: (0..t).map(|i| i as f64).collect(),
        ..SynthesisConfig::default()
    };
    synth_gaussian_cdf_process(&cfg).expect("synthetic dataset")
}
