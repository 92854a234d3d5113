use crate::error::{Error, Result};
use crate::types::ScoreWindow;

/// Smallest `k` in `1..=n` with `k / n >= 1 - alpha`, evaluated in the same
/// floating-point arithmetic as the counting rule, so that
/// `#{scores <= s} / n < 1 - alpha` holds exactly when `s` lies below the
/// `k`-th smallest score.
pub fn threshold_rank(n: usize, alpha: f64) -> usize {
    debug_assert!(n > 0);
    let target = 1.0 - alpha;
    let nf = n as f64;
    let mut k = ((target * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= target {
        k -= 1;
    }
    while k < n && (k as f64) / nf < target {
        k += 1;
    }
    k
}

/// Order-statistic threshold: a candidate score is included iff it is
/// strictly below the returned value.
pub fn calibration_threshold(window: &ScoreWindow, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    threshold_unchecked(window, alpha)
}

/// Same rule, also accepting `alpha = 0` (threshold is the maximum score).
pub(crate) fn threshold_unchecked(window: &ScoreWindow, alpha: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Empty("calibration window"));
    }
    let k = threshold_rank(window.len(), alpha);
    Ok(window.kth_smallest(k).expect("rank within window"))
}

/// Threshold over a plain slice of scores.
pub fn threshold_of_scores(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("calibration scores"));
    }
    check_pipeline_alpha(alpha)?;
    let k = threshold_rank(scores.len(), alpha);
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Pipelines accept `alpha` in `[0, 1)`.
pub(crate) fn check_pipeline_alpha(alpha: f64) -> Result<()> {
    if alpha.is_nan() || !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation of the counting rule.
    fn included_by_counting(scores: &[f64], alpha: f64, candidate: f64) -> bool {
        let count = scores.iter().filter(|&&s| s <= candidate).count();
        (count as f64) / (scores.len() as f64) < 1.0 - alpha
    }

    #[test]
    fn one_to_ten_at_alpha_0_2() {
        let w = ScoreWindow::from_scores((1..=10).map(f64::from).collect()).unwrap();
        let thr = calibration_threshold(&w, 0.2).unwrap();
        assert_eq!(thr, 8.0);
        assert!(7.5 < thr);
        assert!(8.0 >= thr);
        let scores = w.to_vec();
        assert!(included_by_counting(&scores, 0.2, 7.5));
        assert!(!included_by_counting(&scores, 0.2, 8.0));
    }

    #[test]
    fn all_equal_scores_exclude_that_value() {
        let w = ScoreWindow::from_scores(vec![5.0; 7]).unwrap();
        for alpha in [0.01, 0.3, 0.9] {
            let thr = calibration_threshold(&w, alpha).unwrap();
            assert_eq!(thr, 5.0);
            assert!(5.0 >= thr);
        }
    }

    #[test]
    fn single_score() {
        let w = ScoreWindow::from_scores(vec![3.0]).unwrap();
        assert_eq!(calibration_threshold(&w, 0.1).unwrap(), 3.0);
    }

    #[test]
    fn errors() {
        let w = ScoreWindow::new(3).unwrap();
        assert!(matches!(calibration_threshold(&w, 0.1), Err(Error::Empty(_))));
        let w = ScoreWindow::from_scores(vec![1.0]).unwrap();
        for alpha in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(calibration_threshold(&w, alpha), Err(Error::InvalidAlpha(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn matches_counting_rule(
            raw in prop::collection::vec(0u8..12, 1..60),
            alpha in 0.001f64..0.999,
            candidate in 0u8..13,
            jitter in 0.0f64..1.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 4.0).collect();
            let w = ScoreWindow::from_scores(scores.clone()).unwrap();
            let thr = calibration_threshold(&w, alpha).unwrap();
            // candidates both on and between score values
            for cand in [f64::from(candidate) / 4.0, f64::from(candidate) / 4.0 + jitter / 8.0] {
                prop_assert_eq!(cand < thr, included_by_counting(&scores, alpha, cand));
            }
        }
    }
}
