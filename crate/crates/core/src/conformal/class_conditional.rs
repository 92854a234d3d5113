//! Class-conditional calibration: one threshold per class, computed from the
//! calibration scores whose true label is that class.

use serde::{Deserialize, Serialize};

use super::threshold::threshold_of_scores;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    /// One per class; classes without scores carry the marginal threshold.
    pub per_class: Vec<f64>,
    /// Maximum over `per_class`.
    pub max: f64,
    /// Threshold over all scores pooled.
    pub marginal: f64,
    /// Which classes had no scores.
    pub fallback: Vec<bool>,
}

pub fn class_conditional_thresholds(
    scores: &[(f64, usize)],
    n_classes: usize,
    alpha: f64,
) -> Result<ClassThresholds> {
    let pooled: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    let marginal = threshold_of_scores(&pooled, alpha)?;
    let mut per_class = Vec::with_capacity(n_classes);
    let mut fallback = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let own: Vec<f64> = scores.iter().filter(|&&(_, y)| y == c).map(|&(s, _)| s).collect();
        if own.is_empty() {
            per_class.push(marginal);
            fallback.push(true);
        } else {
            per_class.push(threshold_of_scores(&own, alpha)?);
            fallback.push(false);
        }
    }
    let max = per_class.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ClassThresholds {
        per_class,
        max,
        marginal,
        fallback,
    })
}
