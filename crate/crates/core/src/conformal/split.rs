//! Split conformal prediction sets (SRAPS; SAPS when `lambda = 0`).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::stream::{calibration_scores, run_stream, StreamConfig, StreamingCalibrator, ThresholdMode};
use crate::classifier::{fit, ClassifierSpec, FittedClassifier};
use crate::error::{invalid, Result};
use crate::random::{stream, RandomSource};
use crate::scores::ScoreParams;
use crate::types::{LabeledSeries, PredictionSet, ProbVector, RegParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitMode {
    /// First half trains, last half calibrates.
    #[default]
    SequentialHalf,
    /// Shuffled halves, for exchangeable data.
    Random { seed: u64 },
}

impl SplitMode {
    /// `(train indices, calibration indices)`, each in time order.
    pub fn partition(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let n_fit = n / 2;
        if n_fit == 0 || n_fit == n {
            return Err(invalid("split", format!("cannot split {n} points into two nonempty parts")));
        }
        match self {
            SplitMode::SequentialHalf => Ok(((0..n_fit).collect(), (n_fit..n).collect())),
            SplitMode::Random { seed } => {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut RandomSource::new(*seed).rng(stream::SPLIT, 0));
                let mut fit_part = all[..n_fit].to_vec();
                let mut cal_part = all[n_fit..].to_vec();
                fit_part.sort_unstable();
                cal_part.sort_unstable();
                Ok((fit_part, cal_part))
            }
        }
    }
}

/// A classifier fit on one part of the training data, with its predictions
/// on the calibration part.
#[derive(Debug, Clone)]
pub struct SrapsFit {
    model: FittedClassifier,
    cal_indices: Vec<usize>,
    cal_probs: Vec<ProbVector>,
    cal_labels: Vec<usize>,
    n_train: usize,
    uniforms: RandomSource,
}

impl SrapsFit {
    pub fn fit(train: &LabeledSeries, spec: &ClassifierSpec, split: SplitMode, seed: u64) -> Result<Self> {
        let (fit_idx, cal_idx) = split.partition(train.len())?;
        let model = fit(spec, &train.select(&fit_idx))?;
        let cal_probs = cal_idx
            .iter()
            .map(|&t| model.predict_proba(train.feature(t)))
            .collect::<Result<Vec<_>>>()?;
        let cal_labels = cal_idx.iter().map(|&t| train.label(t)).collect();
        Ok(Self {
            model,
            cal_indices: cal_idx,
            cal_probs,
            cal_labels,
            n_train: train.len(),
            uniforms: RandomSource::new(seed),
        })
    }

    pub fn model(&self) -> &FittedClassifier {
        &self.model
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn calibration_indices(&self) -> &[usize] {
        &self.cal_indices
    }

    pub fn calibration_labels(&self) -> &[usize] {
        &self.cal_labels
    }

    pub fn uniforms(&self) -> &RandomSource {
        &self.uniforms
    }

    pub fn calibration_scores(&self, score: &ScoreParams) -> Result<Vec<f64>> {
        calibration_scores(&self.cal_probs, &self.cal_labels, &self.cal_indices, &self.uniforms, score)
    }

    pub fn predict_test_all(&self, features: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        features.iter().map(|x| self.model.predict_proba(x)).collect()
    }

    /// Sets for precomputed test probabilities with one fixed threshold.
    /// Test index `j` uses `U` at absolute index `T + j`.
    pub fn predict_sets(
        &self,
        test_probs: Vec<ProbVector>,
        alpha: f64,
        score: ScoreParams,
        mode: ThresholdMode,
    ) -> Result<Vec<PredictionSet>> {
        let config = StreamConfig {
            alpha,
            score,
            batch_size: None,
            mode,
        };
        let mut calibrator = StreamingCalibrator::new(
            self.calibration_scores(&score)?,
            &self.cal_labels,
            self.model.n_classes(),
            config,
        )?;
        let labels = vec![0; test_probs.len()];
        run_stream(&mut calibrator, test_probs, &labels, self.n_train, &self.uniforms)
    }
}

/// Fits on one split part, calibrates on the other and builds one set per
/// test feature.
pub fn sraps(
    train: &LabeledSeries,
    test_features: &[Vec<f64>],
    alpha: f64,
    reg: RegParams,
    spec: &ClassifierSpec,
    split: SplitMode,
    seed: u64,
) -> Result<Vec<PredictionSet>> {
    let fitted = SrapsFit::fit(train, spec, split, seed)?;
    let probs = fitted.predict_test_all(test_features)?;
    fitted.predict_sets(probs, alpha, ScoreParams::raps(reg), ThresholdMode::Marginal)
}
