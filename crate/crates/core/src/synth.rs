//! Synthetic data with a known conditional distribution, oracle sets, and
//! Monte Carlo experiments for the coverage-gap rate, set convergence and
//! the DKW bound.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierSpec;
use crate::conformal::{
    calibration_scores, eraps_predict_stream, run_stream, top_mass_prefix, EnsembleConfig, ErapsFit,
    Method, MethodConfig, PreparedMethod, StreamConfig, StreamingCalibrator, ThresholdMode,
};
use crate::error::{invalid, Error, Result};
use crate::eval::{fmt_f64, marginal_metrics};
use crate::random::{derive_seed, stream, RandomSource};
use crate::scores::ScoreParams;
use crate::types::{LabeledSeries, PredictionSet, ProbVector, RegParams};

/// Parameters of the Gaussian AR(1) / softmax-linear generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub n_classes: usize,
    pub dim: usize,
    /// AR(1) coefficient in `[0, 1)`.
    pub rho: f64,
    /// Multiplier on the drawn weight matrix.
    pub signal: f64,
    /// Logits at time `t` of an `n`-point path are scaled by
    /// `1 / (1 + drift * t / n)`; zero means stationary.
    pub drift: f64,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            n_classes: 5,
            dim: 8,
            rho: 0.5,
            signal: 1.0,
            drift: 0.0,
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(invalid("n_classes", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(invalid("rho", format!("{} is outside [0, 1)", self.rho)));
        }
        if !self.signal.is_finite() || !(self.drift.is_finite() && self.drift >= 0.0) {
            return Err(invalid("signal", "signal and drift must be finite, drift nonnegative"));
        }
        Ok(())
    }

    /// Draws `W` entries from a standard normal seeded by `seed`.
    pub fn build(&self) -> Result<SyntheticDgp> {
        self.validate()?;
        let mut rng = RandomSource::new(self.seed).rng(stream::DGP_WEIGHTS, 0);
        let weights = (0..self.n_classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| self.signal * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        SyntheticDgp::with_weights(*self, weights)
    }
}

/// A generator with its weight matrix realized.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDgp {
    spec: DgpSpec,
    weights: Vec<Vec<f64>>,
    noise_scale: f64,
}

/// A generated path with the true conditional distribution per index.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub series: LabeledSeries,
    pub true_probs: Vec<ProbVector>,
}

impl SyntheticDgp {
    /// Uses `weights` (K rows of length d) as is; `spec.signal` is ignored.
    pub fn with_weights(spec: DgpSpec, weights: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.n_classes {
            return Err(Error::DimensionMismatch {
                expected: spec.n_classes,
                found: weights.len(),
            });
        }
        if let Some(row) = weights.iter().find(|r| r.len() != spec.dim) {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                found: row.len(),
            });
        }
        Ok(Self {
            spec,
            weights,
            noise_scale: (1.0 - spec.rho * spec.rho).sqrt(),
        })
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Innovation standard deviation giving unit stationary variance.
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// `softmax(scale * W x)`.
    pub fn probs_at(&self, x: &[f64], scale: f64) -> ProbVector {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .map(|w| scale * w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        ProbVector::softmax(&logits)
    }

    fn drift_scale(&self, t: usize, n: usize) -> f64 {
        1.0 / (1.0 + self.spec.drift * t as f64 / n as f64)
    }

    /// Path seeded by the DGP's own seed.
    pub fn generate(&self, n: usize) -> Result<SyntheticSample> {
        self.generate_with(n, self.spec.seed)
    }

    /// Path of length `n` seeded by `path_seed`; `W` stays fixed.
    pub fn generate_with(&self, n: usize, path_seed: u64) -> Result<SyntheticSample> {
        if n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        let mut rng = RandomSource::new(path_seed).rng(stream::DGP_PATH, 0);
        let d = self.spec.dim;
        let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut true_probs = Vec::with_capacity(n);
        for t in 0..n {
            if t > 0 {
                for xi in &mut x {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *xi = self.spec.rho * *xi + self.noise_scale * eps;
                }
            }
            let pi = self.probs_at(&x, self.drift_scale(t, n));
            labels.push(sample_label(&pi, &mut rng));
            true_probs.push(pi);
            features.push(x.clone());
        }
        Ok(SyntheticSample {
            series: LabeledSeries::new(features, labels, self.spec.n_classes, d)?,
            true_probs,
        })
    }
}

/// Inverse-CDF draw from `pi`.
pub fn sample_label(pi: &ProbVector, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in pi.as_slice().iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // Rounding left the cumulative sum just under 1: take the last class
    // with positive mass.
    pi.as_slice().iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// The true-distribution set: smallest descending prefix of `pi` with mass
/// at least `1 - alpha`.
pub fn oracle_set(index: usize, pi: &ProbVector, alpha: f64) -> PredictionSet {
    top_mass_prefix(index, pi, alpha)
}

/// Settings shared by the coverage and convergence experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Test points per replication.
    pub n_test: usize,
    pub ensemble: EnsembleConfig,
    pub classifier: ClassifierSpec,
    /// Labels revealed per slide. `None` keeps the calibration window fixed
    /// for the whole test stream, so each replication's coverage reflects a
    /// single window of `T` scores.
    pub batch_size: Option<usize>,
    pub reg: RegParams,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_test: 2000,
            ensemble: EnsembleConfig::default(),
            classifier: ClassifierSpec::default(),
            batch_size: None,
            reg: RegParams::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self, t_list: &[usize], reps: usize) -> Result<()> {
        if reps == 0 {
            return Err(invalid("reps", "must be at least 1"));
        }
        if t_list.is_empty() {
            return Err(Error::Empty("T list"));
        }
        if t_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("T list", "must be strictly increasing"));
        }
        if t_list[0] < 2 {
            return Err(invalid("T list", "every T must be at least 2"));
        }
        if self.n_test == 0 {
            return Err(invalid("n_test", "must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Path seed for replication `rep` at training length `t`.
    /// Batch size for method dispatch: one batch covering the whole test
    /// stream is the same as a fixed window.
    fn method_batch(&self) -> usize {
        self.batch_size.unwrap_or(self.n_test)
    }

    fn path_seed(&self, t: usize, rep: usize) -> u64 {
        let base = RandomSource::new(self.seed).replication(rep as u64).seed();
        derive_seed(base, t as u64)
    }
}

/// What produces the sets in the coverage-gap experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GapArm {
    /// A fitted method.
    Method { method: Method },
    /// Scores from the true distribution, no estimation.
    OracleScores,
}

impl GapArm {
    pub fn name(&self) -> String {
        match self {
            GapArm::Method { method } => method.name().to_string(),
            GapArm::OracleScores => "oracle-scores".into(),
        }
    }
}

/// What produces the sets in the set-convergence experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlugIn {
    /// ERAPS on fitted classifiers.
    Estimated,
    /// The true distribution in place of the classifier.
    Oracle,
}

impl PlugIn {
    pub fn name(&self) -> &'static str {
        match self {
            PlugIn::Estimated => "estimated",
            PlugIn::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub alpha: f64,
    pub t: usize,
    pub mean_gap: f64,
    pub gap_se: f64,
    pub mean_coverage: f64,
    pub mean_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub t: usize,
    /// Fraction of test points with `|C Δ C*| <= 1`.
    pub frac_within_one: f64,
    pub mean_sym_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkwRow {
    pub t: usize,
    pub bound: f64,
    pub exceed_freq: f64,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum TheoryReport {
    CoverageGap {
        arm: String,
        reps: usize,
        rows: Vec<GapRow>,
        /// Per alpha, whether each gap is at most the previous one plus the
        /// standard error of their difference.
        nonincreasing: bool,
    },
    SetConvergence {
        alpha: f64,
        plug_in: PlugIn,
        reps: usize,
        rows: Vec<ConvergenceRow>,
    },
    Dkw {
        reps: usize,
        rows: Vec<DkwRow>,
    },
}

impl TheoryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            TheoryReport::CoverageGap { arm, rows, .. } => {
                out.push_str("arm,alpha,t,mean_gap,gap_se,mean_coverage,mean_size\n");
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{arm},{},{},{},{},{},{}",
                        fmt_f64(r.alpha),
                        r.t,
                        fmt_f64(r.mean_gap),
                        fmt_f64(r.gap_se),
                        fmt_f64(r.mean_coverage),
                        fmt_f64(r.mean_size)
                    );
                }
            }
            TheoryReport::SetConvergence { alpha, plug_in, rows, .. } => {
                out.push_str("plug_in,alpha,t,frac_within_one,mean_sym_diff\n");
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        plug_in.name(),
                        fmt_f64(*alpha),
                        r.t,
                        fmt_f64(r.frac_within_one),
                        fmt_f64(r.mean_sym_diff)
                    );
                }
            }
            TheoryReport::Dkw { rows, .. } => {
                out.push_str("t,bound,exceed_freq,mean_distance\n");
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        r.t,
                        fmt_f64(r.bound),
                        fmt_f64(r.exceed_freq),
                        fmt_f64(r.mean_distance)
                    );
                }
            }
        }
        out
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sets from true-distribution scores: calibrate on the first `t` true
/// vectors, then stream over the rest.
fn oracle_stream(
    sample: &SyntheticSample,
    t: usize,
    alpha: f64,
    score: ScoreParams,
    batch_size: Option<usize>,
    uniforms: &RandomSource,
) -> Result<Vec<PredictionSet>> {
    let labels = sample.series.labels();
    let indices: Vec<usize> = (0..t).collect();
    let scores = calibration_scores(&sample.true_probs[..t], &labels[..t], &indices, uniforms, &score)?;
    let config = StreamConfig {
        alpha,
        score,
        batch_size,
        mode: ThresholdMode::Marginal,
    };
    let mut cal = StreamingCalibrator::new(scores, &labels[..t], sample.series.n_classes(), config)?;
    run_stream(&mut cal, sample.true_probs[t..].to_vec(), &labels[t..], t, uniforms)
}

/// Marginal coverage gap `|coverage - (1 - alpha)|` per `(alpha, T)`,
/// averaged over `reps` fresh paths of length `T + n_test`.
pub fn coverage_gap_experiment(
    dgp: &SyntheticDgp,
    arm: GapArm,
    alphas: &[f64],
    t_list: &[usize],
    reps: usize,
    config: &ExperimentConfig,
) -> Result<TheoryReport> {
    config.validate(t_list, reps)?;
    if alphas.is_empty() {
        return Err(Error::Empty("alpha list"));
    }
    if let Some(&a) = alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
        return Err(Error::InvalidAlpha(a));
    }
    let mut rows = Vec::new();
    let mut nonincreasing = true;
    for &t in t_list {
        // One fit per replication serves every alpha.
        let per_rep: Vec<Vec<(f64, f64)>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let seed = config.path_seed(t, rep);
                let sample = dgp.generate_with(t + config.n_test, seed)?;
                let (train, test) = sample.series.split_at(t);
                let prepared = match arm {
                    GapArm::Method { method } => {
                        let mc = MethodConfig {
                            ensemble: config.ensemble,
                            batch_size: config.method_batch(),
                            classifier: config.classifier,
                            seed,
                            ..MethodConfig::default()
                        };
                        Some(PreparedMethod::prepare(method, &train, &test, &mc)?)
                    }
                    GapArm::OracleScores => None,
                };
                alphas
                    .iter()
                    .map(|&alpha| {
                        let sets = match &prepared {
                            Some(p) => p.predict(alpha, config.reg)?,
                            None => oracle_stream(
                                &sample,
                                t,
                                alpha,
                                ScoreParams::raps(config.reg),
                                config.batch_size,
                                &RandomSource::new(seed),
                            )?,
                        };
                        marginal_metrics(&sets, test.labels())
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (a, &alpha) in alphas.iter().enumerate() {
            let gaps: Vec<f64> = per_rep.iter().map(|r| (r[a].0 - (1.0 - alpha)).abs()).collect();
            let (mean_gap, gap_se) = mean_and_se(&gaps);
            let coverage: Vec<f64> = per_rep.iter().map(|r| r[a].0).collect();
            let size: Vec<f64> = per_rep.iter().map(|r| r[a].1).collect();
            rows.push(GapRow {
                alpha,
                t,
                mean_gap,
                gap_se,
                mean_coverage: mean_and_se(&coverage).0,
                mean_size: mean_and_se(&size).0,
            });
        }
    }
    for a in alphas {
        let seq: Vec<&GapRow> = rows.iter().filter(|r| r.alpha == *a).collect();
        for w in seq.windows(2) {
            let se = (w[0].gap_se.powi(2) + w[1].gap_se.powi(2)).sqrt();
            if w[1].mean_gap > w[0].mean_gap + se {
                nonincreasing = false;
            }
        }
    }
    Ok(TheoryReport::CoverageGap {
        arm: arm.name(),
        reps,
        rows,
        nonincreasing,
    })
}

/// How often the total-mass-score set lands within one label of the
/// oracle set, per `T`.
pub fn set_convergence_experiment(
    dgp: &SyntheticDgp,
    alpha: f64,
    t_list: &[usize],
    reps: usize,
    plug_in: PlugIn,
    config: &ExperimentConfig,
) -> Result<TheoryReport> {
    config.validate(t_list, reps)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let score = ScoreParams::total_mass();
    let mut rows = Vec::new();
    for &t in t_list {
        let diffs: Vec<Vec<usize>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let seed = config.path_seed(t, rep);
                let sample = dgp.generate_with(t + config.n_test, seed)?;
                let sets = match plug_in {
                    PlugIn::Oracle => oracle_stream(
                        &sample,
                        t,
                        alpha,
                        score,
                        config.batch_size,
                        &RandomSource::new(seed),
                    )?,
                    PlugIn::Estimated => {
                        let (train, test) = sample.series.split_at(t);
                        let fit = ErapsFit::fit(&train, &config.ensemble, &config.classifier, seed)?;
                        let stream_config = StreamConfig {
                            alpha,
                            score,
                            batch_size: config.batch_size,
                            mode: ThresholdMode::Marginal,
                        };
                        eraps_predict_stream(&fit, &test, stream_config)?
                    }
                };
                Ok(sets
                    .iter()
                    .zip(&sample.true_probs[t..])
                    .map(|(s, pi)| s.symmetric_difference_len(&oracle_set(s.index, pi, alpha)))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let all: Vec<usize> = diffs.into_iter().flatten().collect();
        let n = all.len() as f64;
        rows.push(ConvergenceRow {
            t,
            frac_within_one: all.iter().filter(|&&d| d <= 1).count() as f64 / n,
            mean_sym_diff: all.iter().sum::<usize>() as f64 / n,
        });
    }
    Ok(TheoryReport::SetConvergence {
        alpha,
        plug_in,
        reps,
        rows,
    })
}

/// The DKW-type radius `sqrt(ln(16 T) / T)`.
pub fn dkw_bound(t: usize) -> f64 {
    let t = t as f64;
    ((16.0 * t).ln() / t).sqrt()
}

/// Exact sup distance between the empirical CDF of `sample` and the
/// standard uniform CDF. Both one-sided limits are checked at every jump.
pub fn ks_distance_uniform(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.clamp(0.0, 1.0);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Frequency over `reps` uniform samples of size `T` with KS distance
/// above [`dkw_bound`].
pub fn dkw_experiment(t_list: &[usize], reps: usize, seed: u64) -> Result<TheoryReport> {
    if reps == 0 {
        return Err(invalid("reps", "must be at least 1"));
    }
    if t_list.is_empty() {
        return Err(Error::Empty("T list"));
    }
    if t_list.contains(&0) {
        return Err(invalid("T list", "every T must be at least 1"));
    }
    let source = RandomSource::new(seed);
    let rows = t_list
        .iter()
        .map(|&t| {
            let bound = dkw_bound(t);
            let distances: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = source.rng(derive_seed(stream::REPLICATION, t as u64), rep as u64);
                    let sample: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
                    ks_distance_uniform(&sample)
                })
                .collect();
            DkwRow {
                t,
                bound,
                exceed_freq: distances.iter().filter(|&&d| d > bound).count() as f64 / reps as f64,
                mean_distance: distances.iter().sum::<f64>() / reps as f64,
            }
        })
        .collect();
    Ok(TheoryReport::Dkw { reps, rows })
}
