//! Non-conformity scores.
//!
//! Ties in the probability vector follow the strict inequality of the
//! definitions: tied labels share both `mass_above` and `rank_of`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ProbVector, RegParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: usize,
    pub score: f64,
    pub rank: usize,
}

/// How a pipeline turns a probability vector into scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub reg: RegParams,
    /// When false, `U_t` is replaced by zero.
    pub randomized: bool,
}

impl ScoreParams {
    /// Randomized, regularized score.
    pub fn raps(reg: RegParams) -> Self {
        Self {
            reg,
            randomized: true,
        }
    }

    /// Plain total-mass score: no randomization, no penalty.
    pub fn total_mass() -> Self {
        Self {
            reg: RegParams::unregularized(),
            randomized: false,
        }
    }

    pub fn effective_u(&self, u: f64) -> f64 {
        if self.randomized {
            u
        } else {
            0.0
        }
    }
}

fn check_label(p: &ProbVector, c: usize) -> Result<()> {
    if c >= p.len() {
        return Err(Error::LabelOutOfRange {
            label: c,
            classes: p.len(),
        });
    }
    Ok(())
}

/// Total probability of labels strictly more likely than `c`.
pub fn mass_above(p: &ProbVector, c: usize) -> Result<f64> {
    check_label(p, c)?;
    let pc = p.get(c);
    Ok(p.as_slice().iter().filter(|&&q| q > pc).sum())
}

/// One plus the number of labels strictly more likely than `c`.
pub fn rank_of(p: &ProbVector, c: usize) -> Result<usize> {
    check_label(p, c)?;
    let pc = p.get(c);
    Ok(p.as_slice().iter().filter(|&&q| q > pc).count() + 1)
}

/// `mass_above + p(c) * u + lambda * (rank - k_reg)^+`.
pub fn raps_score(p: &ProbVector, c: usize, u: f64, reg: &RegParams) -> Result<f64> {
    let mass = mass_above(p, c)?;
    let rank = rank_of(p, c)?;
    Ok(mass + p.get(c) * u + penalty(rank, reg))
}

fn penalty(rank: usize, reg: &RegParams) -> f64 {
    reg.lambda * rank.saturating_sub(reg.k_reg) as f64
}

/// Score of a label outside the model's label space: ranked below every
/// known label with zero probability.
pub fn unseen_label_score(n_classes: usize, reg: &RegParams) -> f64 {
    1.0 + penalty(n_classes + 1, reg)
}

/// Scores every label, ordered by descending probability (ties by label).
///
/// Scores agree bit-for-bit with [`raps_score`], ties included.
pub fn score_all_labels(p: &ProbVector, u: f64, reg: &RegParams) -> Vec<ScoredLabel> {
    let order = p.descending_order();
    let mut out = Vec::with_capacity(order.len());
    let mut i = 0;
    while i < order.len() {
        // Block of tied labels starting at position i; the mass is summed in
        // label order, exactly as `mass_above` does.
        let pi = p.get(order[i]);
        let mut j = i;
        while j < order.len() && p.get(order[j]) == pi {
            j += 1;
        }
        let rank = i + 1;
        let mass: f64 = p.as_slice().iter().filter(|&&q| q > pi).sum();
        for &label in &order[i..j] {
            out.push(ScoredLabel {
                label,
                score: mass + pi * u + penalty(rank, reg),
                rank,
            });
        }
        i = j;
    }
    out
}
