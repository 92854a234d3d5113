use crate::scores::score_all_labels;
use crate::types::{PredictionSet, ProbVector, RegParams};

/// Labels whose score lies strictly below `threshold`, in
/// descending-probability order. Scores are nondecreasing along that order,
/// so the result is always a prefix of it (possibly empty).
pub fn build_set(
    index: usize,
    p: &ProbVector,
    u: f64,
    reg: &RegParams,
    threshold: f64,
) -> PredictionSet {
    let labels: Vec<usize> = score_all_labels(p, u, reg)
        .into_iter()
        .filter(|s| s.score < threshold)
        .map(|s| s.label)
        .collect();
    let set = PredictionSet::new(index, labels);
    debug_assert!(set.is_prefix_of(p));
    set
}

/// Per-label thresholds: label `c` is kept iff its score is below
/// `thresholds[c]`. Not necessarily a prefix.
pub fn build_set_per_class(
    index: usize,
    p: &ProbVector,
    u: f64,
    reg: &RegParams,
    thresholds: &[f64],
) -> PredictionSet {
    let labels = score_all_labels(p, u, reg)
        .into_iter()
        .filter(|s| s.score < thresholds[s.label])
        .map(|s| s.label)
        .collect();
    PredictionSet::new(index, labels)
}

/// Smallest descending-probability prefix with cumulative mass at least
/// `1 - alpha`. Never empty; falls back to every label when rounding keeps
/// the running sum just below the target.
pub fn top_mass_prefix(index: usize, p: &ProbVector, alpha: f64) -> PredictionSet {
    let target = 1.0 - alpha;
    let mut labels = Vec::new();
    let mut mass = 0.0;
    for c in p.descending_order() {
        labels.push(c);
        mass += p.get(c);
        if mass >= target {
            break;
        }
    }
    PredictionSet::new(index, labels)
}

/// Naive baseline: top labels of the estimated distribution until their
/// mass reaches `1 - alpha`.
pub fn naive_set(index: usize, p: &ProbVector, alpha: f64) -> PredictionSet {
    top_mass_prefix(index, p, alpha)
}
