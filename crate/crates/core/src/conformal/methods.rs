//! Method dispatch. Preparing a method fits its models and caches test
//! predictions once; prediction sets for any `(alpha, reg)` are then
//! recomputed from the cache without refitting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ensemble::{EnsembleConfig, ErapsFit};
use super::sets::naive_set;
use super::split::{SplitMode, SrapsFit};
use super::stream::{run_stream, StreamConfig, StreamingCalibrator, ThresholdMode};
use super::threshold::check_pipeline_alpha;
use crate::classifier::{fit, ClassifierSpec};
use crate::error::{invalid, Error, Result};
use crate::scores::ScoreParams;
use crate::types::{LabeledSeries, PredictionSet, ProbVector, RegParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Eraps,
    Sraps,
    /// SRAPS with `lambda` forced to zero.
    Saps,
    Naive,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Eraps, Method::Sraps, Method::Saps, Method::Naive];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Eraps => "eraps",
            Method::Sraps => "sraps",
            Method::Saps => "saps",
            Method::Naive => "naive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| invalid("method", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub ensemble: EnsembleConfig,
    /// Labels revealed per slide (ERAPS).
    pub batch_size: usize,
    pub split: SplitMode,
    pub classifier: ClassifierSpec,
    pub seed: u64,
    pub mode: ThresholdMode,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            ensemble: EnsembleConfig::default(),
            batch_size: 1,
            split: SplitMode::SequentialHalf,
            classifier: ClassifierSpec::default(),
            seed: 0,
            mode: ThresholdMode::Marginal,
        }
    }
}

#[derive(Debug, Clone)]
enum Fitted {
    Eraps(ErapsFit),
    Split(SrapsFit),
    Naive,
}

/// Fitted models plus cached test predictions.
#[derive(Debug, Clone)]
pub struct PreparedMethod {
    method: Method,
    fitted: Fitted,
    test_probs: Vec<ProbVector>,
    test_labels: Vec<usize>,
    n_classes: usize,
    n_train: usize,
    batch_size: usize,
    mode: ThresholdMode,
}

impl PreparedMethod {
    pub fn prepare(
        method: Method,
        train: &LabeledSeries,
        test: &LabeledSeries,
        config: &MethodConfig,
    ) -> Result<Self> {
        if test.dim() != train.dim() {
            return Err(Error::DimensionMismatch {
                expected: train.dim(),
                found: test.dim(),
            });
        }
        if config.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        let (fitted, test_probs) = match method {
            Method::Eraps => {
                let f = ErapsFit::fit(train, &config.ensemble, &config.classifier, config.seed)?;
                let probs = f.predict_test_all(test.features())?;
                (Fitted::Eraps(f), probs)
            }
            Method::Sraps | Method::Saps => {
                let f = SrapsFit::fit(train, &config.classifier, config.split, config.seed)?;
                let probs = f.predict_test_all(test.features())?;
                (Fitted::Split(f), probs)
            }
            Method::Naive => {
                let model = fit(&config.classifier, train)?;
                let probs = test
                    .features()
                    .iter()
                    .map(|x| model.predict_proba(x))
                    .collect::<Result<Vec<_>>>()?;
                (Fitted::Naive, probs)
            }
        };
        Ok(Self {
            method,
            fitted,
            test_probs,
            test_labels: test.labels().to_vec(),
            n_classes: train.n_classes(),
            n_train: train.len(),
            batch_size: config.batch_size,
            mode: config.mode,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Class count of the fitted models.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn test_probs(&self) -> &[ProbVector] {
        &self.test_probs
    }

    /// Regularization actually applied: SAPS zeroes `lambda`; the naive
    /// baseline has none.
    pub fn effective_reg(&self, reg: RegParams) -> RegParams {
        match self.method {
            Method::Saps => RegParams { lambda: 0.0, ..reg },
            Method::Naive => RegParams::unregularized(),
            _ => reg,
        }
    }

    /// Prediction sets for every test point.
    pub fn predict(&self, alpha: f64, reg: RegParams) -> Result<Vec<PredictionSet>> {
        check_pipeline_alpha(alpha)?;
        let score = ScoreParams::raps(self.effective_reg(reg));
        match &self.fitted {
            Fitted::Eraps(f) => {
                let config = StreamConfig {
                    alpha,
                    score,
                    batch_size: Some(self.batch_size),
                    mode: self.mode,
                };
                let mut calibrator = StreamingCalibrator::new(
                    f.calibration_scores(&score)?,
                    f.train_labels(),
                    self.n_classes,
                    config,
                )?;
                run_stream(
                    &mut calibrator,
                    self.test_probs.clone(),
                    &self.test_labels,
                    f.n_train(),
                    f.uniforms(),
                )
            }
            Fitted::Split(f) => f.predict_sets(self.test_probs.clone(), alpha, score, self.mode),
            Fitted::Naive => {
                let first = self.n_train;
                Ok(self
                    .test_probs
                    .iter()
                    .enumerate()
                    .map(|(j, p)| naive_set(first + j, p, alpha))
                    .collect())
            }
        }
    }

    /// Bootstrap fallbacks (ERAPS only).
    pub fn fallback_count(&self) -> usize {
        match &self.fitted {
            Fitted::Eraps(f) => f.fallback_count(),
            _ => 0,
        }
    }
}
