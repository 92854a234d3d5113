//! Shared fixtures for the benchmarks.

use eraps_core::{DgpSpec, EnsembleConfig, LabeledSeries};

/// Train and test halves of a default synthetic path.
pub fn split_sample(n_classes: usize, n_train: usize, n_test: usize) -> (LabeledSeries, LabeledSeries) {
    let spec = DgpSpec {
        n_classes,
        seed: 1,
        ..DgpSpec::default()
    };
    let sample = spec.build().expect("valid spec").generate(n_train + n_test).expect("generates");
    sample.series.split_at(n_train)
}

pub fn ensemble(n_models: usize) -> EnsembleConfig {
    EnsembleConfig {
        n_models,
        ..EnsembleConfig::default()
    }
}
