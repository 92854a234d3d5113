//! Conformal prediction sets for time-series classification.
//!
//! ERAPS (bootstrap ensemble, leave-one-out calibration, sliding score
//! window), split-conformal SRAPS/SAPS, a naive top-mass baseline, coverage
//! metrics and a synthetic-data harness with a known conditional
//! distribution.

pub mod classifier;
pub mod conformal;
pub mod error;
pub mod eval;
pub mod random;
pub mod scores;
pub mod synth;
pub mod types;

pub use classifier::{fit, gradient_check, ClassifierKind, ClassifierSpec, FittedClassifier};
pub use conformal::{
    build_set, naive_set, sraps, Aggregation, EnsembleConfig, EnsembleModel, ErapsFit, Method,
    MethodConfig, PreparedMethod, SplitMode, StreamConfig, StreamingCalibrator, ThresholdMode,
};
pub use error::{Error, Result};
pub use eval::{EvalReport, SweepGrid};
pub use random::RandomSource;
pub use scores::{raps_score, score_all_labels, ScoreParams};
pub use synth::{DgpSpec, SyntheticDgp, TheoryReport};
pub use types::{LabeledSeries, PredictionSet, ProbVector, RegParams, ScoreWindow};
