//! Domain types shared across the crate.
//!
//! Labels are dense, 0-based class indices. Row order of a [`LabeledSeries`]
//! is time order and is never shuffled by anything in this crate.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance for the sum of a [`ProbVector`].
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Time-ordered feature/label pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    dim: usize,
}

impl LabeledSeries {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        dim: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: labels.len(),
            });
        }
        if n_classes == 0 {
            return Err(invalid("n_classes", "must be at least 1"));
        }
        if let Some(row) = features.iter().find(|row| row.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Rows at `indices`, in the given order. Repeats are allowed, which is
    /// how bootstrap resamples are materialized.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            dim: self.dim,
        }
    }

    /// Time cut: the first `n` rows and the remainder.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    /// Same rows with a wider label space (used when a test split carries
    /// classes never seen in training).
    pub fn with_n_classes(mut self, n_classes: usize) -> Result<Self> {
        if let Some(&label) = self.labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        self.n_classes = n_classes;
        Ok(self)
    }
}

/// A probability distribution over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Renormalizes nonnegative weights. Rejects negative or non-finite
    /// entries and a zero total.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidProbVector("no entries".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidProbVector(format!(
                "entry {w} is negative or not finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidProbVector("entries sum to zero".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Numerically stable softmax of raw logits.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        self.descending_order()[0]
    }

    /// Labels sorted by descending probability, ties by ascending label.
    pub fn descending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.0.len()).collect();
        order.sort_by(|&a, &b| descending(self.0[a], self.0[b]).then(a.cmp(&b)));
        order
    }
}

fn descending(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Regularization pair `(lambda, k_reg)` of the RAPS score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub lambda: f64,
    pub k_reg: usize,
}

impl Default for RegParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            k_reg: 2,
        }
    }
}

impl RegParams {
    pub fn new(lambda: f64, k_reg: usize) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(invalid("lambda", format!("{lambda} must be finite and >= 0")));
        }
        if k_reg == 0 {
            return Err(invalid("k_reg", "must be at least 1"));
        }
        Ok(Self { lambda, k_reg })
    }

    /// No penalty term: the plain adaptive score.
    pub fn unregularized() -> Self {
        Self {
            lambda: 0.0,
            k_reg: 1,
        }
    }

    /// Checks `k_reg <= n_classes`.
    pub fn check_classes(&self, n_classes: usize) -> Result<()> {
        if self.k_reg > n_classes {
            return Err(invalid(
                "k_reg",
                format!("{} exceeds the class count {n_classes}", self.k_reg),
            ));
        }
        Ok(())
    }
}

/// Labels selected for one time index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub index: usize,
    pub labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(index: usize, labels: Vec<usize>) -> Self {
        Self { index, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.contains(&label)
    }

    /// True when the set equals the first `len()` labels of `p`'s
    /// descending-probability order.
    pub fn is_prefix_of(&self, p: &ProbVector) -> bool {
        let order = p.descending_order();
        if self.labels.len() > order.len() {
            return false;
        }
        let mut mine = self.labels.clone();
        let mut head = order[..self.labels.len()].to_vec();
        mine.sort_unstable();
        head.sort_unstable();
        mine == head
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.labels.iter().all(|l| other.contains(*l))
    }

    /// Size of the symmetric difference.
    pub fn symmetric_difference_len(&self, other: &PredictionSet) -> usize {
        let only_self = self.labels.iter().filter(|l| !other.contains(**l)).count();
        let only_other = other.labels.iter().filter(|l| !self.contains(**l)).count();
        only_self + only_other
    }
}

/// FIFO buffer of the most recent calibration scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWindow {
    scores: VecDeque<f64>,
    capacity: usize,
}

impl ScoreWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("capacity", "must be positive"));
        }
        Ok(Self {
            scores: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    /// Window holding `scores` with capacity equal to their count.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        let mut window = Self::new(scores.len())?;
        window.extend(scores);
        Ok(window)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Appends a score, evicting the oldest once full.
    pub fn push(&mut self, score: f64) {
        if self.scores.len() == self.capacity {
            self.scores.pop_front();
        }
        self.scores.push_back(score);
    }

    /// Slides a batch forward in the given (time) order.
    pub fn extend(&mut self, batch: impl IntoIterator<Item = f64>) {
        for score in batch {
            self.push(score);
        }
    }

    /// Scores from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.scores.iter().copied().collect()
    }

    /// The `k`-th smallest score, 1-based.
    pub fn kth_smallest(&self, k: usize) -> Option<f64> {
        if k == 0 || k > self.scores.len() {
            return None;
        }
        let mut buf = self.to_vec();
        let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
        Some(*kth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_vector_renormalizes() {
        let p = ProbVector::new(vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.25, 0.25]);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < PROB_SUM_TOL);
    }

    #[test]
    fn prob_vector_rejects_negative_and_zero_sum() {
        assert!(ProbVector::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(ProbVector::new(vec![0.0, 0.0]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn descending_order_breaks_ties_by_label() {
        let p = ProbVector::new(vec![0.2, 0.4, 0.2, 0.2]).unwrap();
        assert_eq!(p.descending_order(), vec![1, 0, 2, 3]);
    }

    #[test]
    fn series_rejects_bad_rows() {
        assert!(matches!(
            LabeledSeries::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 0], 2, 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            LabeledSeries::new(vec![vec![1.0]], vec![3], 2, 1),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            LabeledSeries::new(vec![vec![1.0]], vec![], 2, 1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn reg_params_bounds() {
        assert!(RegParams::new(-1.0, 1).is_err());
        assert!(RegParams::new(1.0, 0).is_err());
        let reg = RegParams::new(1.0, 4).unwrap();
        assert!(reg.check_classes(3).is_err());
        assert!(reg.check_classes(4).is_ok());
    }

    #[test]
    fn window_keeps_most_recent() {
        let mut w = ScoreWindow::new(3).unwrap();
        for i in 0..5 {
            w.push(i as f64);
        }
        assert_eq!(w.to_vec(), vec![2.0, 3.0, 4.0]);
        assert_eq!(w.kth_smallest(1), Some(2.0));
        assert_eq!(w.kth_smallest(4), None);
    }

    #[test]
    fn prefix_check() {
        let p = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert!(PredictionSet::new(0, vec![1, 2]).is_prefix_of(&p));
        assert!(PredictionSet::new(0, vec![]).is_prefix_of(&p));
        assert!(!PredictionSet::new(0, vec![1, 0]).is_prefix_of(&p));
    }

    proptest::proptest! {
        #[test]
        fn window_length_is_min_of_inserts_and_capacity(
            cap in 1usize..20,
            values in proptest::collection::vec(-10.0f64..10.0, 0..60),
        ) {
            let mut w = ScoreWindow::new(cap).unwrap();
            w.extend(values.iter().copied());
            let n = values.len();
            proptest::prop_assert_eq!(w.len(), n.min(cap));
            proptest::prop_assert_eq!(w.to_vec(), values[n - n.min(cap)..].to_vec());
        }

        #[test]
        fn prob_vector_sums_to_one(weights in proptest::collection::vec(0.0f64..5.0, 1..12)) {
            if weights.iter().sum::<f64>() > 0.0 {
                let p = ProbVector::new(weights).unwrap();
                proptest::prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < PROB_SUM_TOL);
            }
        }
    }
}
