//! Prediction-set construction: split (SRAPS/SAPS), ensemble (ERAPS) with a
//! sliding calibration window, the naive top-mass baseline, and
//! class-conditional calibration.

mod class_conditional;
mod ensemble;
mod methods;
mod sets;
mod split;
mod stream;
mod threshold;

pub use class_conditional::{class_conditional_thresholds, ClassThresholds};
pub use ensemble::{Aggregation, EnsembleConfig, EnsembleModel, ErapsFit};
pub use methods::{Method, MethodConfig, PreparedMethod};
pub use sets::{build_set, build_set_per_class, naive_set, top_mass_prefix};
pub use split::{sraps, SplitMode, SrapsFit};
pub use stream::{calibration_scores, run_stream, StreamConfig, StreamingCalibrator, ThresholdMode};
pub use threshold::{calibration_threshold, threshold_of_scores, threshold_rank};

use crate::error::Result;
use crate::types::{LabeledSeries, PredictionSet};

/// Streams ERAPS prediction sets over `test`, revealing labels in batches
/// of `config.batch_size`.
pub fn eraps_predict_stream(
    fitted: &ErapsFit,
    test: &LabeledSeries,
    config: StreamConfig,
) -> Result<Vec<PredictionSet>> {
    let mut calibrator = StreamingCalibrator::new(
        fitted.calibration_scores(&config.score)?,
        fitted.train_labels(),
        fitted.n_classes(),
        config,
    )?;
    let probs = fitted.predict_test_all(test.features())?;
    run_stream(&mut calibrator, probs, test.labels(), fitted.n_train(), fitted.uniforms())
}
