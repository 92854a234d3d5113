//! Sequential prediction with a sliding calibration window.
//!
//! Labels are revealed in batches of `s`: every prediction in a batch uses
//! the window as it stood after the previous batch was slid in. Once `s`
//! labels are revealed their scores replace the `s` oldest window entries,
//! in time order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sets::{build_set, build_set_per_class};
use super::threshold::{check_pipeline_alpha, threshold_unchecked};
use crate::error::{invalid, Error, Result};
use crate::random::RandomSource;
use crate::scores::{raps_score, unseen_label_score, ScoreParams};
use crate::types::{PredictionSet, ProbVector, ScoreWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// One pooled threshold.
    #[default]
    Marginal,
    /// One threshold per candidate label, from that class's scores.
    ClassConditional,
    /// The maximum class-conditional threshold, applied to every label.
    ClassMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub alpha: f64,
    pub score: ScoreParams,
    /// Labels revealed per slide; `None` keeps the calibration window fixed.
    pub batch_size: Option<usize>,
    pub mode: ThresholdMode,
}

impl StreamConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        check_pipeline_alpha(self.alpha)?;
        self.score.reg.check_classes(n_classes)?;
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Pending {
    probs: ProbVector,
    u: f64,
    label: Option<usize>,
}

/// Single-owner calibration state for one stream.
#[derive(Debug, Clone)]
pub struct StreamingCalibrator {
    n_classes: usize,
    config: StreamConfig,
    window: ScoreWindow,
    class_windows: Vec<Option<ScoreWindow>>,
    pending: BTreeMap<usize, Pending>,
    revealed: usize,
    slides: usize,
}

impl StreamingCalibrator {
    /// `scores[i]` is the calibration score of a point whose true label is
    /// `labels[i]`, both in time order.
    pub fn new(
        scores: Vec<f64>,
        labels: &[usize],
        n_classes: usize,
        config: StreamConfig,
    ) -> Result<Self> {
        config.validate(n_classes)?;
        if scores.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: labels.len(),
            });
        }
        let total = scores.len();
        let class_windows = if config.mode == ThresholdMode::Marginal {
            Vec::new()
        } else {
            (0..n_classes)
                .map(|c| {
                    let own: Vec<f64> = scores
                        .iter()
                        .zip(labels)
                        .filter(|&(_, &y)| y == c)
                        .map(|(&s, _)| s)
                        .collect();
                    let capacity = if own.is_empty() {
                        total.div_ceil(n_classes).max(1)
                    } else {
                        own.len()
                    };
                    let mut w = ScoreWindow::new(capacity).expect("positive capacity");
                    w.extend(own);
                    w
                })
                .map(Some)
                .collect()
        };
        Ok(Self {
            n_classes,
            config,
            window: ScoreWindow::from_scores(scores)?,
            class_windows,
            pending: BTreeMap::new(),
            revealed: 0,
            slides: 0,
        })
    }

    pub fn window(&self) -> &ScoreWindow {
        &self.window
    }

    /// Number of batches slid into the window so far.
    pub fn slides(&self) -> usize {
        self.slides
    }

    /// Current pooled threshold.
    pub fn threshold(&self) -> Result<f64> {
        threshold_unchecked(&self.window, self.config.alpha)
    }

    fn class_thresholds(&self, marginal: f64) -> Result<Vec<f64>> {
        self.class_windows
            .iter()
            .map(|w| match w {
                Some(w) if !w.is_empty() => threshold_unchecked(w, self.config.alpha),
                _ => Ok(marginal),
            })
            .collect()
    }

    /// Builds the set for test index `index` and caches `(probs, u)` until
    /// its label is revealed.
    pub fn predict(&mut self, index: usize, probs: ProbVector, u: f64) -> Result<PredictionSet> {
        if probs.len() != self.n_classes {
            return Err(Error::DimensionMismatch {
                expected: self.n_classes,
                found: probs.len(),
            });
        }
        let u = self.config.score.effective_u(u);
        let reg = &self.config.score.reg;
        let marginal = self.threshold()?;
        let set = match self.config.mode {
            ThresholdMode::Marginal => build_set(index, &probs, u, reg, marginal),
            ThresholdMode::ClassConditional => {
                let per_class = self.class_thresholds(marginal)?;
                build_set_per_class(index, &probs, u, reg, &per_class)
            }
            ThresholdMode::ClassMax => {
                let max = self
                    .class_thresholds(marginal)?
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                build_set(index, &probs, u, reg, max)
            }
        };
        self.pending.insert(
            index,
            Pending {
                probs,
                u,
                label: None,
            },
        );
        Ok(set)
    }

    /// Reveals the true label of a predicted index. A label `>= n_classes`
    /// (a class unknown to the model) scores above every known label.
    pub fn reveal(&mut self, index: usize, label: usize) -> Result<()> {
        let entry = self
            .pending
            .get_mut(&index)
            .filter(|p| p.label.is_none())
            .ok_or(Error::UnknownIndex(index))?;
        entry.label = Some(label);
        self.revealed += 1;
        if let Some(s) = self.config.batch_size {
            if self.revealed >= s {
                self.slide();
            }
        }
        Ok(())
    }

    fn slide(&mut self) {
        let ready: Vec<usize> = self
            .pending
            .iter()
            .filter(|(_, p)| p.label.is_some())
            .map(|(&t, _)| t)
            .collect();
        let reg = self.config.score.reg;
        for t in ready {
            let p = self.pending.remove(&t).expect("present");
            let label = p.label.expect("revealed");
            let score = if label < self.n_classes {
                raps_score(&p.probs, label, p.u, &reg).expect("label in range")
            } else {
                unseen_label_score(self.n_classes, &reg)
            };
            self.window.push(score);
            if let Some(Some(w)) = self.class_windows.get_mut(label) {
                w.push(score);
            }
        }
        self.revealed = 0;
        self.slides += 1;
    }
}

/// Calibration scores for points with known labels.
pub fn calibration_scores(
    probs: &[ProbVector],
    labels: &[usize],
    indices: &[usize],
    uniforms: &RandomSource,
    score: &ScoreParams,
) -> Result<Vec<f64>> {
    probs
        .iter()
        .zip(labels)
        .zip(indices)
        .map(|((p, &y), &t)| raps_score(p, y, score.effective_u(uniforms.uniform_at(t)), &score.reg))
        .collect()
}

/// Runs a full stream: predict a batch of `s` points, reveal their labels,
/// slide, repeat. `first_index` is the absolute time index of the first
/// test point; `U_t` comes from `uniforms` at that absolute index.
pub fn run_stream(
    calibrator: &mut StreamingCalibrator,
    test_probs: Vec<ProbVector>,
    test_labels: &[usize],
    first_index: usize,
    uniforms: &RandomSource,
) -> Result<Vec<PredictionSet>> {
    if test_probs.len() != test_labels.len() {
        return Err(Error::LengthMismatch {
            left: test_probs.len(),
            right: test_labels.len(),
        });
    }
    let batch = calibrator.config.batch_size.unwrap_or(usize::MAX).max(1);
    let mut sets = Vec::with_capacity(test_probs.len());
    let mut probs = test_probs.into_iter().enumerate().peekable();
    while probs.peek().is_some() {
        let mut in_batch = Vec::new();
        for (j, p) in probs.by_ref().take(batch) {
            let t = first_index + j;
            sets.push(calibrator.predict(t, p, uniforms.uniform_at(t))?);
            in_batch.push(j);
        }
        if calibrator.config.batch_size.is_some() {
            for j in in_batch {
                calibrator.reveal(first_index + j, test_labels[j])?;
            }
        }
    }
    Ok(sets)
}
