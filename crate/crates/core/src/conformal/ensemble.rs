//! Bootstrap ensembles and leave-one-out (LOO) aggregation.
//!
//! Each of the `B` members is fit on a bootstrap resample `S_b` of the
//! training indices. The LOO predictor for training index `t` aggregates the
//! members whose resample excludes `t`; its score on `(X_t, Y_t)` is an
//! out-of-sample calibration score without any data splitting.
//!
//! At a test point the prediction aggregates the `T` LOO predictors
//! evaluated at the test feature. For the mean this collapses to a fixed
//! weighting of the `B` members: `w_b = (1/T) * sum_t 1(b in M_t) / |M_t|`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stream::calibration_scores;
use crate::classifier::{fit, ClassifierSpec, FittedClassifier};
use crate::error::{invalid, Error, Result};
use crate::random::{derive_seed, stream, RandomSource};
use crate::scores::ScoreParams;
use crate::types::{LabeledSeries, ProbVector, ScoreWindow};

/// Aggregation applied per class across member predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
    /// Drops `floor(fraction * n)` values from each end before averaging.
    TrimmedMean { fraction: f64 },
}

impl Aggregation {
    pub fn validate(&self) -> Result<()> {
        if let Aggregation::TrimmedMean { fraction } = self {
            if !(0.0..0.5).contains(fraction) {
                return Err(invalid("phi", format!("trim fraction {fraction} not in [0, 0.5)")));
            }
        }
        Ok(())
    }

    fn combine(&self, values: &mut [f64]) -> f64 {
        let n = values.len();
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / n as f64,
            Aggregation::Median => {
                values.sort_by(f64::total_cmp);
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
            Aggregation::TrimmedMean { fraction } => {
                values.sort_by(f64::total_cmp);
                let cut = ((fraction * n as f64).floor() as usize).min((n - 1) / 2);
                let kept = &values[cut..n - cut];
                kept.iter().sum::<f64>() / kept.len() as f64
            }
        }
    }

    /// Per-class aggregate of `members`, renormalized to a distribution.
    pub fn aggregate<'a>(&self, members: impl IntoIterator<Item = &'a ProbVector>) -> Result<ProbVector> {
        let members: Vec<&ProbVector> = members.into_iter().collect();
        let first = members.first().ok_or(Error::Empty("aggregation members"))?;
        let k = first.len();
        let mut column = vec![0.0; members.len()];
        let mut out = Vec::with_capacity(k);
        for c in 0..k {
            for (slot, m) in column.iter_mut().zip(&members) {
                *slot = m.get(c);
            }
            out.push(self.combine(&mut column));
        }
        ProbVector::new(out)
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregation::Mean => write!(f, "mean"),
            Aggregation::Median => write!(f, "median"),
            Aggregation::TrimmedMean { fraction } => write!(f, "trimmed-mean:{fraction}"),
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    /// `mean`, `median`, or `trimmed-mean:<fraction>`.
    fn from_str(s: &str) -> Result<Self> {
        let phi = match s {
            "mean" => Aggregation::Mean,
            "median" => Aggregation::Median,
            other => {
                let fraction = other
                    .strip_prefix("trimmed-mean:")
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| invalid("phi", format!("unknown aggregation `{other}`")))?;
                Aggregation::TrimmedMean { fraction }
            }
        };
        phi.validate()?;
        Ok(phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_models: usize,
    pub phi: Aggregation,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_models: 30,
            phi: Aggregation::Mean,
        }
    }
}

/// `B` fitted members and the resampled index multisets they were fit on.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    models: Vec<FittedClassifier>,
    index_sets: Vec<Vec<usize>>,
    phi: Aggregation,
    n_train: usize,
}

impl EnsembleModel {
    /// Draws `B` bootstrap resamples and fits one member on each. Members
    /// are trained in parallel; results are assembled in member order.
    pub fn train(
        train: &LabeledSeries,
        config: &EnsembleConfig,
        spec: &ClassifierSpec,
        source: &RandomSource,
    ) -> Result<Self> {
        if config.n_models == 0 {
            return Err(invalid("B", "at least one bootstrap model is required"));
        }
        config.phi.validate()?;
        let n = train.len();
        if n < 2 {
            return Err(invalid("T", "ensemble training needs at least two points"));
        }
        let index_sets: Vec<Vec<usize>> = (0..config.n_models)
            .map(|b| {
                let mut rng = source.rng(stream::BOOTSTRAP, b as u64);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            })
            .collect();
        let models = index_sets
            .par_iter()
            .enumerate()
            .map(|(b, idx)| {
                let member_spec = ClassifierSpec {
                    init_seed: derive_seed(spec.init_seed, b as u64),
                    ..*spec
                };
                fit(&member_spec, &train.select(idx))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            models,
            index_sets,
            phi: config.phi,
            n_train: n,
        })
    }

    /// Assembles an ensemble from already fitted members.
    pub fn from_parts(
        models: Vec<FittedClassifier>,
        index_sets: Vec<Vec<usize>>,
        phi: Aggregation,
        n_train: usize,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(invalid("B", "at least one bootstrap model is required"));
        }
        if models.len() != index_sets.len() {
            return Err(Error::LengthMismatch {
                left: models.len(),
                right: index_sets.len(),
            });
        }
        for set in &index_sets {
            if set.len() != n_train {
                return Err(Error::LengthMismatch {
                    left: set.len(),
                    right: n_train,
                });
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= n_train) {
                return Err(invalid("index_sets", format!("index {bad} >= {n_train}")));
            }
        }
        phi.validate()?;
        Ok(Self {
            models,
            index_sets,
            phi,
            n_train,
        })
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[FittedClassifier] {
        &self.models
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn phi(&self) -> Aggregation {
        self.phi
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// For every training index, the members whose resample excludes it.
    pub fn loo_members(&self) -> Vec<Vec<usize>> {
        let mut in_sample = vec![vec![false; self.n_train]; self.models.len()];
        for (b, set) in self.index_sets.iter().enumerate() {
            for &i in set {
                in_sample[b][i] = true;
            }
        }
        (0..self.n_train)
            .map(|t| (0..self.models.len()).filter(|&b| !in_sample[b][t]).collect())
            .collect()
    }

    /// Every member's prediction at `x`.
    pub fn member_predictions(&self, x: &[f64]) -> Result<Vec<ProbVector>> {
        self.models.iter().map(|m| m.predict_proba(x)).collect()
    }
}

/// A trained ensemble with its LOO predictions on the training data.
#[derive(Debug, Clone)]
pub struct ErapsFit {
    ensemble: EnsembleModel,
    train_labels: Vec<usize>,
    loo_members: Vec<Vec<usize>>,
    loo_probs: Vec<ProbVector>,
    fallback_count: usize,
    mean_weights: Vec<f64>,
    uniforms: RandomSource,
}

impl ErapsFit {
    /// Trains the ensemble and computes the LOO predictions.
    pub fn fit(
        train: &LabeledSeries,
        config: &EnsembleConfig,
        spec: &ClassifierSpec,
        seed: u64,
    ) -> Result<Self> {
        let source = RandomSource::new(seed);
        let ensemble = EnsembleModel::train(train, config, spec, &source)?;
        Self::from_ensemble(ensemble, train, seed)
    }

    /// LOO predictions for an existing ensemble. An index contained in every
    /// resample falls back to aggregating all members and is counted in
    /// [`ErapsFit::fallback_count`].
    pub fn from_ensemble(ensemble: EnsembleModel, train: &LabeledSeries, seed: u64) -> Result<Self> {
        if train.len() != ensemble.n_train() {
            return Err(Error::LengthMismatch {
                left: train.len(),
                right: ensemble.n_train(),
            });
        }
        let all: Vec<usize> = (0..ensemble.n_models()).collect();
        let mut fallback_count = 0;
        let loo_members: Vec<Vec<usize>> = ensemble
            .loo_members()
            .into_iter()
            .map(|m| {
                if m.is_empty() {
                    fallback_count += 1;
                    all.clone()
                } else {
                    m
                }
            })
            .collect();
        let loo_probs = loo_members
            .par_iter()
            .enumerate()
            .map(|(t, members)| {
                let x = train.feature(t);
                let preds = members
                    .iter()
                    .map(|&b| ensemble.models[b].predict_proba(x))
                    .collect::<Result<Vec<_>>>()?;
                ensemble.phi.aggregate(&preds)
            })
            .collect::<Result<Vec<_>>>()?;

        let t_count = train.len() as f64;
        let mut mean_weights = vec![0.0; ensemble.n_models()];
        for members in &loo_members {
            let share = 1.0 / members.len() as f64;
            for &b in members {
                mean_weights[b] += share;
            }
        }
        mean_weights.iter_mut().for_each(|w| *w /= t_count);

        Ok(Self {
            ensemble,
            train_labels: train.labels().to_vec(),
            loo_members,
            loo_probs,
            fallback_count,
            mean_weights,
            uniforms: RandomSource::new(seed),
        })
    }

    pub fn ensemble(&self) -> &EnsembleModel {
        &self.ensemble
    }

    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.ensemble.models[0].n_classes()
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.train_labels
    }

    /// Aggregated LOO prediction at each training point, in time order.
    pub fn loo_probs(&self) -> &[ProbVector] {
        &self.loo_probs
    }

    /// Training indices that appeared in every bootstrap resample.
    pub fn fallback_count(&self) -> usize {
        self.fallback_count
    }

    pub fn uniforms(&self) -> &RandomSource {
        &self.uniforms
    }

    /// LOO scores of the training points, in time order.
    pub fn calibration_scores(&self, score: &ScoreParams) -> Result<Vec<f64>> {
        let indices: Vec<usize> = (0..self.n_train()).collect();
        calibration_scores(&self.loo_probs, &self.train_labels, &indices, &self.uniforms, score)
    }

    pub fn calibration_window(&self, score: &ScoreParams) -> Result<ScoreWindow> {
        ScoreWindow::from_scores(self.calibration_scores(score)?)
    }

    /// Aggregate of the `T` LOO predictors evaluated at a test feature.
    pub fn predict_test(&self, x: &[f64]) -> Result<ProbVector> {
        let members = self.ensemble.member_predictions(x)?;
        match self.ensemble.phi {
            Aggregation::Mean => {
                let k = members[0].len();
                let mut out = vec![0.0; k];
                for (w, p) in self.mean_weights.iter().zip(&members) {
                    for (o, v) in out.iter_mut().zip(p.as_slice()) {
                        *o += w * v;
                    }
                }
                ProbVector::new(out)
            }
            phi => {
                let loo = self
                    .loo_members
                    .iter()
                    .map(|m| phi.aggregate(m.iter().map(|&b| &members[b])))
                    .collect::<Result<Vec<_>>>()?;
                phi.aggregate(&loo)
            }
        }
    }

    /// Test predictions for every row, computed in parallel.
    pub fn predict_test_all(&self, features: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        features.par_iter().map(|x| self.predict_test(x)).collect()
    }

    /// Direct (unweighted) aggregation over the LOO predictors at `x`,
    /// without the mean shortcut.
    #[doc(hidden)]
    pub fn predict_test_direct(&self, x: &[f64]) -> Result<ProbVector> {
        let members = self.ensemble.member_predictions(x)?;
        let phi = self.ensemble.phi;
        let loo = self
            .loo_members
            .iter()
            .map(|m| phi.aggregate(m.iter().map(|&b| &members[b])))
            .collect::<Result<Vec<_>>>()?;
        phi.aggregate(&loo)
    }
}
