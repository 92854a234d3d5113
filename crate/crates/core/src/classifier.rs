//! Trainable probabilistic classifiers: multinomial logistic regression and
//! a one-hidden-layer tanh network, both fit by full-batch gradient descent
//! on mean cross-entropy plus an L2 penalty on the weight matrices.
//!
//! Inputs are standardized with per-feature statistics of the training data.
//! Every summation runs in a fixed order, so a fit is bitwise reproducible.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::types::{LabeledSeries, ProbVector};

const MAX_HALVINGS: usize = 30;
const MONOTONE_TOL: f64 = 1e-8;
const FILE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    #[serde(alias = "logistic")]
    MultinomialLogistic,
    #[serde(alias = "net")]
    OneHiddenLayerNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    /// Hidden units; ignored by the logistic model.
    pub hidden_width: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::MultinomialLogistic,
            hidden_width: 16,
            l2: 1e-4,
            learning_rate: 1.0,
            epochs: 150,
            init_seed: 0,
        }
    }
}

impl ClassifierSpec {
    pub fn logistic() -> Self {
        Self::default()
    }

    pub fn net(hidden_width: usize) -> Self {
        Self {
            kind: ClassifierKind::OneHiddenLayerNet,
            hidden_width,
            learning_rate: 0.5,
            epochs: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        if self.kind == ClassifierKind::OneHiddenLayerNet && self.hidden_width == 0 {
            return Err(invalid("hidden_width", "must be at least 1 for the network"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(invalid("l2", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Shape of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layout {
    kind: ClassifierKind,
    classes: usize,
    dim: usize,
    hidden: usize,
}

impl Layout {
    fn n_params(&self) -> usize {
        match self.kind {
            ClassifierKind::MultinomialLogistic => self.classes * self.dim + self.classes,
            ClassifierKind::OneHiddenLayerNet => {
                self.hidden * self.dim + self.hidden + self.classes * self.hidden + self.classes
            }
        }
    }

    /// Whether parameter `i` is a weight (penalized) rather than a bias.
    fn is_weight(&self, i: usize) -> bool {
        let (k, d, h) = (self.classes, self.dim, self.hidden);
        match self.kind {
            ClassifierKind::MultinomialLogistic => i < k * d,
            ClassifierKind::OneHiddenLayerNet => {
                i < h * d || (i >= h * d + h && i < h * d + h + k * h)
            }
        }
    }

    /// Writes logits into `out`; `hidden` receives the tanh activations.
    fn forward(&self, params: &[f64], z: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (k, d, h) = (self.classes, self.dim, self.hidden);
        match self.kind {
            ClassifierKind::MultinomialLogistic => {
                let (w, b) = params.split_at(k * d);
                for c in 0..k {
                    out[c] = b[c] + dot(&w[c * d..(c + 1) * d], z);
                }
            }
            ClassifierKind::OneHiddenLayerNet => {
                let (w1, rest) = params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                for u in 0..h {
                    hidden[u] = (b1[u] + dot(&w1[u * d..(u + 1) * d], z)).tanh();
                }
                for c in 0..k {
                    out[c] = b2[c] + dot(&w2[c * h..(c + 1) * h], hidden);
                }
            }
        }
    }

    /// Mean cross-entropy plus `l2 / 2 * ||weights||^2`; accumulates the
    /// gradient into `grad` when given.
    fn loss_and_grad(
        &self,
        params: &[f64],
        inputs: &[Vec<f64>],
        labels: &[usize],
        l2: f64,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let (k, d, h) = (self.classes, self.dim, self.hidden);
        let n = inputs.len() as f64;
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; k];
        let mut delta = vec![0.0; k];
        let mut dhidden = vec![0.0; h];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }

        let mut total = 0.0;
        for (z, &y) in inputs.iter().zip(labels) {
            self.forward(params, z, &mut hidden, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            total += log_norm - logits[y];

            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            for c in 0..k {
                delta[c] = (logits[c] - log_norm).exp() - if c == y { 1.0 } else { 0.0 };
            }
            match self.kind {
                ClassifierKind::MultinomialLogistic => {
                    let (gw, gb) = g.split_at_mut(k * d);
                    for c in 0..k {
                        axpy(delta[c], z, &mut gw[c * d..(c + 1) * d]);
                        gb[c] += delta[c];
                    }
                }
                ClassifierKind::OneHiddenLayerNet => {
                    let w2 = &params[h * d + h..h * d + h + k * h];
                    let (gw1, rest) = g.split_at_mut(h * d);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(k * h);
                    dhidden.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..k {
                        axpy(delta[c], &hidden, &mut gw2[c * h..(c + 1) * h]);
                        gb2[c] += delta[c];
                        axpy(delta[c], &w2[c * h..(c + 1) * h], &mut dhidden);
                    }
                    for u in 0..h {
                        let da = dhidden[u] * (1.0 - hidden[u] * hidden[u]);
                        axpy(da, z, &mut gw1[u * d..(u + 1) * d]);
                        gb1[u] += da;
                    }
                }
            }
        }

        let mut penalty = 0.0;
        for (i, &p) in params.iter().enumerate() {
            if self.is_weight(i) {
                penalty += p * p;
            }
        }
        if let Some(g) = grad {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi /= n;
                if self.is_weight(i) {
                    *gi += l2 * params[i];
                }
            }
        }
        total / n + 0.5 * l2 * penalty
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Standardizer {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(features: &[Vec<f64>], dim: usize) -> Self {
        let n = features.len() as f64;
        let mut center = vec![0.0; dim];
        for row in features {
            axpy(1.0, row, &mut center);
        }
        center.iter_mut().for_each(|c| *c /= n);
        let mut var = vec![0.0; dim];
        for row in features {
            for j in 0..dim {
                let dev = row[j] - center[j];
                var[j] += dev * dev;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { center, scale }
    }

    fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (c, s))| (v - c) / s)
            .collect()
    }
}

/// A trained classifier. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedClassifier {
    format_version: u32,
    layout: Layout,
    standardizer: Standardizer,
    params: Vec<f64>,
    loss_trace: Vec<f64>,
}

impl FittedClassifier {
    /// Logistic model with all-zero parameters; predicts the uniform vector.
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        let layout = Layout {
            kind: ClassifierKind::MultinomialLogistic,
            classes: n_classes,
            dim,
            hidden: 0,
        };
        Self {
            format_version: FILE_FORMAT_VERSION,
            layout,
            standardizer: Standardizer::identity(dim),
            params: vec![0.0; layout.n_params()],
            loss_trace: Vec::new(),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        self.layout.kind
    }

    pub fn n_classes(&self) -> usize {
        self.layout.classes
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Training objective after initialization and after every accepted step.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        if x.len() != self.layout.dim {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim,
                found: x.len(),
            });
        }
        let z = self.standardizer.apply(x);
        let mut hidden = vec![0.0; self.layout.hidden];
        let mut logits = vec![0.0; self.layout.classes];
        self.layout.forward(&self.params, &z, &mut hidden, &mut logits);
        let p = ProbVector::softmax(&logits);
        if p.as_slice().iter().all(|&v| v > 0.0) {
            return Ok(p);
        }
        // Underflowed tail entries.
        ProbVector::new(
            p.as_slice()
                .iter()
                .map(|&v| v.max(f64::MIN_POSITIVE))
                .collect(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_slice(&fs::read(path)?)?;
        if model.format_version != FILE_FORMAT_VERSION {
            return Err(invalid(
                "format_version",
                format!("unsupported model file version {}", model.format_version),
            ));
        }
        if model.params.len() != model.layout.n_params() {
            return Err(Error::DimensionMismatch {
                expected: model.layout.n_params(),
                found: model.params.len(),
            });
        }
        Ok(model)
    }
}

fn layout_for(spec: &ClassifierSpec, data: &LabeledSeries) -> Layout {
    Layout {
        kind: spec.kind,
        classes: data.n_classes(),
        dim: data.dim(),
        hidden: match spec.kind {
            ClassifierKind::MultinomialLogistic => 0,
            ClassifierKind::OneHiddenLayerNet => spec.hidden_width,
        },
    }
}

fn initial_params(layout: &Layout, seed: u64) -> Vec<f64> {
    let mut params = vec![0.0; layout.n_params()];
    if layout.kind == ClassifierKind::OneHiddenLayerNet {
        let (k, d, h) = (layout.classes, layout.dim, layout.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid normal");
        let second = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("valid normal");
        for p in &mut params[..h * d] {
            *p = first.sample(&mut rng);
        }
        for p in &mut params[h * d + h..h * d + h + k * h] {
            *p = second.sample(&mut rng);
        }
    }
    params
}

/// Fits a classifier by full-batch gradient descent.
///
/// A step is accepted only if it does not raise the objective by more than
/// `1e-8`; otherwise the learning rate is halved (and stays halved) and the
/// step retried, at most 30 times. When every retry yields a finite but
/// larger objective the iterate is at a numerical minimum and training
/// stops.
pub fn fit(spec: &ClassifierSpec, data: &LabeledSeries) -> Result<FittedClassifier> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let layout = layout_for(spec, data);
    let standardizer = Standardizer::fit(data.features(), data.dim());
    let inputs: Vec<Vec<f64>> = data.features().iter().map(|x| standardizer.apply(x)).collect();
    let labels = data.labels();

    let mut params = initial_params(&layout, spec.init_seed);
    let mut grad = vec![0.0; params.len()];
    let mut next_grad = vec![0.0; params.len()];
    let mut candidate = vec![0.0; params.len()];
    let mut loss = layout.loss_and_grad(&params, &inputs, labels, spec.l2, Some(&mut grad));
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    let mut loss_trace = vec![loss];
    let mut lr = spec.learning_rate;

    'epochs: for epoch in 1..=spec.epochs {
        let mut saw_finite = false;
        for _ in 0..=MAX_HALVINGS {
            for ((c, p), g) in candidate.iter_mut().zip(&params).zip(&grad) {
                *c = p - lr * g;
            }
            let next = layout.loss_and_grad(&candidate, &inputs, labels, spec.l2, Some(&mut next_grad));
            if next.is_finite() {
                saw_finite = true;
                if next <= loss + MONOTONE_TOL {
                    std::mem::swap(&mut params, &mut candidate);
                    std::mem::swap(&mut grad, &mut next_grad);
                    loss = next;
                    loss_trace.push(loss);
                    continue 'epochs;
                }
            }
            lr *= 0.5;
        }
        if !saw_finite {
            return Err(Error::TrainingDiverged { epoch });
        }
        break;
    }

    Ok(FittedClassifier {
        format_version: FILE_FORMAT_VERSION,
        layout,
        standardizer,
        params,
        loss_trace,
    })
}

/// Maximum relative error between the analytic gradient and central finite
/// differences (step `1e-5`) at a random parameter point drawn from
/// `spec.init_seed`. Relative error uses `max(|a|, |n|, 1e-6)` as the
/// denominator.
pub fn gradient_check(spec: &ClassifierSpec, data: &LabeledSeries) -> Result<f64> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("gradient check data"));
    }
    let layout = layout_for(spec, data);
    let standardizer = Standardizer::fit(data.features(), data.dim());
    let inputs: Vec<Vec<f64>> = data.features().iter().map(|x| standardizer.apply(x)).collect();
    let labels = data.labels();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    let params: Vec<f64> = (0..layout.n_params()).map(|_| normal.sample(&mut rng)).collect();
    Ok(max_gradient_error(&layout, &params, &inputs, labels, spec.l2))
}

fn max_gradient_error(
    layout: &Layout,
    params: &[f64],
    inputs: &[Vec<f64>],
    labels: &[usize],
    l2: f64,
) -> f64 {
    const STEP: f64 = 1e-5;
    let mut analytic = vec![0.0; params.len()];
    layout.loss_and_grad(params, inputs, labels, l2, Some(&mut analytic));
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        probe[i] = params[i] + STEP;
        let up = layout.loss_and_grad(&probe, inputs, labels, l2, None);
        probe[i] = params[i] - STEP;
        let down = layout.loss_and_grad(&probe, inputs, labels, l2, None);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Analytic gradient at an explicit parameter point (standardized inputs).
#[doc(hidden)]
pub fn analytic_gradient(
    spec: &ClassifierSpec,
    data: &LabeledSeries,
    params: &[f64],
) -> Result<Vec<f64>> {
    let layout = layout_for(spec, data);
    if params.len() != layout.n_params() {
        return Err(Error::DimensionMismatch {
            expected: layout.n_params(),
            found: params.len(),
        });
    }
    let standardizer = Standardizer::fit(data.features(), data.dim());
    let inputs: Vec<Vec<f64>> = data.features().iter().map(|x| standardizer.apply(x)).collect();
    let mut grad = vec![0.0; params.len()];
    layout.loss_and_grad(params, &inputs, data.labels(), spec.l2, Some(&mut grad));
    Ok(grad)
}
