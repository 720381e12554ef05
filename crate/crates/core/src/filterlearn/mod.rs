//! Learning a Fourier filter that makes a frozen classifier err where humans
//! err.
//!
//! The filter is parameterized by its non-negative-frequency quadrant
//! `theta`. Each evaluation blurs `theta`, mirrors it to the full spectrum,
//! multiplies every image spectrum by it and hands the filtered image to a
//! differentiable [`Scorer`]. The objective is the cross-entropy of
//! `softmax(s / tau)` against per-stimulus targets derived from an ideal
//! response vector, plus an L1 penalty on `theta`.

pub mod synthetic;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::imagefilter::{
    bin_radius, expand_hermitian, expand_hermitian_adjoint, Fft2d, FilterError, GaussianKernel, Image, Quadrant,
    SpectralFilter,
};
use crate::ingest::{build_matrices, ConditionSet, DatasetWeights, TrialRecord};
use crate::metrics::{alignment_report, AlignmentReport, MetricsError, ModelResponses, ReportOptions};
use crate::pareto::{best_of_sweep, condition_sweep};

/// Loss above which training is considered diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stimulus {stimulus} must be answered incorrectly but there is only one class")]
    ImpossibleTarget { stimulus: usize },
    #[error("non-finite value in {component}")]
    NonFinite { component: &'static str },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        trace: Vec<EpochRecord>,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("scorer: {0}")]
    Scorer(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// When the per-stimulus targets are recomputed from the current logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetRefresh {
    #[default]
    PerEpoch,
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub l1_weight: f64,
    /// Blur applied to the quadrant before expansion.
    pub smooth_gamma: f64,
    pub init_noise_variance: f64,
    /// Scores are divided by this before the softmax.
    pub initial_temperature: f64,
    pub learn_temperature: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Stimuli per optimizer step; 0 means the whole set.
    pub batch_size: usize,
    pub refresh: TargetRefresh,
    pub seed: u64,
    /// Keep a copy of `theta` every this many epochs.
    pub snapshot_every: Option<usize>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            l1_weight: 5e-5,
            smooth_gamma: 6.0,
            init_noise_variance: 1e-5,
            initial_temperature: 0.07,
            learn_temperature: true,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 32,
            refresh: TargetRefresh::PerEpoch,
            seed: 0,
            snapshot_every: None,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let checks = [
            (self.l1_weight >= 0.0, "l1 weight must be >= 0"),
            (self.smooth_gamma >= 0.0, "smoothing gamma must be >= 0"),
            (self.init_noise_variance >= 0.0, "initial noise variance must be >= 0"),
            (
                self.initial_temperature > 0.0 && self.initial_temperature.is_finite(),
                "temperature must be positive",
            ),
            (self.learning_rate > 0.0, "learning rate must be positive"),
            ((0.0..1.0).contains(&self.beta1), "beta1 must be in [0, 1)"),
            ((0.0..1.0).contains(&self.beta2), "beta2 must be in [0, 1)"),
            (self.epsilon > 0.0, "epsilon must be positive"),
            (self.snapshot_every != Some(0), "snapshot interval must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(LearnError::Config((*msg).to_owned())),
            None => Ok(()),
        }
    }
}

/// A differentiable map from an image to one score per class.
pub trait Scorer {
    fn n_classes(&self) -> usize;

    fn scores(&self, image: &Image) -> Vec<f64>;

    /// Gradient of `sum_c grad_scores[c] * scores[c]` with respect to the
    /// image samples, in the image's planar layout.
    fn input_gradient(&self, image: &Image, grad_scores: &[f64]) -> Vec<f64>;
}

/// Linear classifier over block-averaged pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxScorer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pool: usize,
    pub classes: usize,
    /// Row-major `classes x features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ScorerTraining {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-2,
            l2: 1e-4,
        }
    }
}

impl LinearSoftmaxScorer {
    pub fn zeros(width: usize, height: usize, channels: usize, pool: usize, classes: usize) -> Self {
        assert!(
            pool > 0 && width.rem_euclid(pool) == 0 && height.rem_euclid(pool) == 0,
            "pool must divide the image size"
        );
        let features = channels * (width / pool) * (height / pool);
        Self {
            width,
            height,
            channels,
            pool,
            classes,
            weights: vec![0.0; classes * features],
            bias: vec![0.0; classes],
        }
    }

    pub fn n_features(&self) -> usize {
        self.channels * (self.width / self.pool) * (self.height / self.pool)
    }

    fn check_shape(&self, image: &Image) {
        assert_eq!(
            (image.width(), image.height(), image.channels()),
            (self.width, self.height, self.channels),
            "image shape does not match the scorer"
        );
    }

    pub fn features(&self, image: &Image) -> Vec<f64> {
        self.check_shape(image);
        let (bw, bh) = (self.width / self.pool, self.height / self.pool);
        let scale = 1.0 / (self.pool * self.pool) as f64;
        let mut out = vec![0.0; self.n_features()];
        for c in 0..self.channels {
            let plane = image.plane(c);
            for y in 0..self.height {
                for x in 0..self.width {
                    out[(c * bh + y / self.pool) * bw + x / self.pool] += scale * plane[y * self.width + x];
                }
            }
        }
        out
    }

    fn scores_from_features(&self, features: &[f64]) -> Vec<f64> {
        let n = features.len();
        (0..self.classes)
            .map(|k| {
                self.bias[k]
                    + self.weights[k * n..(k + 1) * n]
                        .iter()
                        .zip(features)
                        .map(|(w, f)| w * f)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Full-batch Adam on the mean cross-entropy plus an L2 penalty,
    /// starting from the current weights.
    pub fn fit(mut self, images: &[Image], labels: &[usize], training: ScorerTraining) -> Result<Self, LearnError> {
        let classes = self.classes;
        if images.is_empty() || images.len() != labels.len() {
            return Err(LearnError::Scorer("need one label per training image".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(LearnError::Scorer(format!("label {bad} out of range")));
        }
        let scorer = &mut self;
        let features: Vec<Vec<f64>> = images.iter().map(|img| scorer.features(img)).collect();
        let n = scorer.n_features();
        let mut adam = Adam::new(classes * (n + 1), training.learning_rate, 0.9, 0.999, 1e-8);
        let inv = 1.0 / images.len() as f64;
        for _ in 0..training.epochs {
            let mut grad = vec![0.0; classes * (n + 1)];
            for (f, &label) in features.iter().zip(labels) {
                let mut p = softmax(&scorer.scores_from_features(f));
                p[label] -= 1.0;
                for k in 0..classes {
                    let row = &mut grad[k * n..(k + 1) * n];
                    row.iter_mut().zip(f).for_each(|(g, x)| *g += inv * p[k] * x);
                    grad[classes * n + k] += inv * p[k];
                }
            }
            for (g, w) in grad.iter_mut().zip(&scorer.weights) {
                *g += training.l2 * w;
            }
            let mut params: Vec<f64> = scorer.weights.iter().chain(&scorer.bias).copied().collect();
            adam.step(&mut params, &grad);
            scorer.weights.copy_from_slice(&params[..classes * n]);
            scorer.bias.copy_from_slice(&params[classes * n..]);
        }
        Ok(self)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), LearnError> {
        let text = serde_json::to_string(self).map_err(|e| LearnError::Scorer(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| LearnError::Scorer(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, LearnError> {
        let text = std::fs::read_to_string(path).map_err(|e| LearnError::Scorer(e.to_string()))?;
        let scorer: Self = serde_json::from_str(&text).map_err(|e| LearnError::Scorer(e.to_string()))?;
        if scorer.weights.len() != scorer.classes * scorer.n_features() || scorer.bias.len() != scorer.classes {
            return Err(LearnError::Scorer(
                "weight table does not match the declared shape".into(),
            ));
        }
        Ok(scorer)
    }
}

impl Scorer for LinearSoftmaxScorer {
    fn n_classes(&self) -> usize {
        self.classes
    }

    fn scores(&self, image: &Image) -> Vec<f64> {
        self.scores_from_features(&self.features(image))
    }

    fn input_gradient(&self, image: &Image, grad_scores: &[f64]) -> Vec<f64> {
        self.check_shape(image);
        let n = self.n_features();
        let mut grad_features = vec![0.0; n];
        for (k, &g) in grad_scores.iter().enumerate() {
            grad_features
                .iter_mut()
                .zip(&self.weights[k * n..(k + 1) * n])
                .for_each(|(a, w)| *a += g * w);
        }
        let (bw, bh) = (self.width / self.pool, self.height / self.pool);
        let scale = 1.0 / (self.pool * self.pool) as f64;
        let mut out = Vec::with_capacity(self.channels * self.width * self.height);
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.push(scale * grad_features[(c * bh + y / self.pool) * bw + x / self.pool]);
                }
            }
        }
        out
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Plain Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// Target class per stimulus: the true class where the ideal responder is
/// correct, otherwise the most likely incorrect class under `logits`.
pub fn build_targets(ideal: &[bool], logits: &[Vec<f64>], true_classes: &[usize]) -> Result<Vec<usize>, LearnError> {
    assert_eq!(ideal.len(), logits.len());
    assert_eq!(ideal.len(), true_classes.len());
    ideal
        .iter()
        .zip(logits)
        .zip(true_classes)
        .enumerate()
        .map(|(i, ((&correct, z), &truth))| {
            target_for(correct, z, truth).ok_or(LearnError::ImpossibleTarget { stimulus: i })
        })
        .collect()
}

fn target_for(correct: bool, logits: &[f64], truth: usize) -> Option<usize> {
    if correct {
        return Some(truth);
    }
    logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != truth)
        .fold(None, |best: Option<(usize, f64)>, (c, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((c, v)),
        })
        .map(|(c, _)| c)
}

fn l1_subgradient(theta: f64) -> f64 {
    if theta > 0.0 {
        1.0
    } else if theta < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Cached transforms for one quadrant size.
#[derive(Debug, Clone)]
pub struct FilterPipeline {
    rows: usize,
    cols: usize,
    fft: Fft2d,
    kernel: GaussianKernel,
}

/// Per-channel spectra of one input image.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    width: usize,
    height: usize,
    channels: usize,
    spectra: Vec<Vec<Complex64>>,
}

struct ImageEval {
    cross_entropy: f64,
    scores: Vec<f64>,
    target: usize,
    // d loss / d amplitude over the full grid, and d loss / d tau
    grads: Option<(Vec<f64>, f64)>,
}

impl FilterPipeline {
    pub fn new(rows: usize, cols: usize, gamma: f64) -> Self {
        Self {
            rows,
            cols,
            fft: Fft2d::new(2 * rows, 2 * cols),
            kernel: GaussianKernel::new(gamma),
        }
    }

    /// Pipeline for images of the given size (both dimensions even).
    pub fn for_image(image: &Image, gamma: f64) -> Result<Self, LearnError> {
        let (h, w) = (image.height(), image.width());
        if h < 2 || w < 2 || h % 2 == 1 || w % 2 == 1 {
            return Err(LearnError::Dataset(format!(
                "image size {w}x{h} must be even in both dimensions"
            )));
        }
        Ok(Self::new(h / 2, w / 2, gamma))
    }

    pub fn smoothed(&self, theta: &[f64]) -> Quadrant {
        Quadrant::new(
            self.rows,
            self.cols,
            self.kernel.apply_plane(theta, self.rows, self.cols),
        )
    }

    pub fn filter(&self, theta: &[f64]) -> Result<SpectralFilter, LearnError> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFinite { component: "filter" });
        }
        Ok(expand_hermitian(&self.smoothed(theta))?)
    }

    /// Pulls a full-grid amplitude gradient back to `theta`.
    pub fn theta_gradient(&self, grad_amplitudes: &[f64]) -> Vec<f64> {
        let folded = expand_hermitian_adjoint(grad_amplitudes, self.rows, self.cols);
        self.kernel.adjoint_plane(&folded, self.rows, self.cols)
    }

    pub fn prepare(&self, image: &Image) -> Result<PreparedImage, LearnError> {
        if (image.height(), image.width()) != (2 * self.rows, 2 * self.cols) {
            return Err(FilterError::Dimensions {
                image: (image.height(), image.width()),
                filter: (2 * self.rows, 2 * self.cols),
            }
            .into());
        }
        Ok(PreparedImage {
            width: image.width(),
            height: image.height(),
            channels: image.channels(),
            spectra: (0..image.channels())
                .map(|c| self.fft.forward_real(image.plane(c)))
                .collect(),
        })
    }

    /// Real part of the filtered image, not clamped.
    pub fn apply(&self, prepared: &PreparedImage, filter: &SpectralFilter) -> Image {
        let mut data = Vec::with_capacity(prepared.width * prepared.height * prepared.channels);
        for spectrum in &prepared.spectra {
            let mut product: Vec<Complex64> = spectrum.iter().zip(&filter.amplitudes).map(|(z, a)| z * a).collect();
            self.fft.inverse(&mut product);
            data.extend(product.iter().map(|z| z.re));
        }
        Image::from_data(prepared.width, prepared.height, prepared.channels, data)
    }

    fn evaluate(
        &self,
        prepared: &PreparedImage,
        filter: &SpectralFilter,
        scorer: &dyn Scorer,
        tau: f64,
        choose_target: impl FnOnce(&[f64]) -> Result<usize, LearnError>,
        want_grad: bool,
    ) -> Result<ImageEval, LearnError> {
        let filtered = self.apply(prepared, filter);
        let scores = scorer.scores(&filtered);
        if scores.len() != scorer.n_classes() || scores.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFinite { component: "scores" });
        }
        let target = choose_target(&scores)?;
        let z: Vec<f64> = scores.iter().map(|s| s / tau).collect();
        let cross_entropy = log_sum_exp(&z) - z[target];
        if !cross_entropy.is_finite() {
            return Err(LearnError::NonFinite {
                component: "cross-entropy",
            });
        }
        let grads = if want_grad {
            let mut dz = softmax(&z);
            dz[target] -= 1.0;
            let grad_scores: Vec<f64> = dz.iter().map(|d| d / tau).collect();
            let grad_tau = -dz.iter().zip(&scores).map(|(d, s)| d * s).sum::<f64>() / (tau * tau);
            let grad_image = scorer.input_gradient(&filtered, &grad_scores);
            // y = Re(IFFT(X . A))  =>  dL/dA_k = Re(X_k . IFFT(dL/dy)_k)
            let plane = prepared.width * prepared.height;
            let mut grad_amplitudes = vec![0.0; plane];
            for (c, spectrum) in prepared.spectra.iter().enumerate() {
                let mut back: Vec<Complex64> = grad_image[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&g| Complex64::new(g, 0.0))
                    .collect();
                self.fft.inverse(&mut back);
                for ((acc, x), b) in grad_amplitudes.iter_mut().zip(spectrum).zip(&back) {
                    *acc += (x * b).re;
                }
            }
            Some((grad_amplitudes, grad_tau))
        } else {
            None
        };
        Ok(ImageEval {
            cross_entropy,
            scores,
            target,
            grads,
        })
    }
}

/// Learnable state: the raw quadrant and the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub theta: Quadrant,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterGradient {
    pub theta: Vec<f64>,
    pub temperature: f64,
}

fn l1_term(theta: &[f64], lambda: f64) -> Result<f64, LearnError> {
    let l1 = lambda * theta.iter().map(|v| v.abs()).sum::<f64>();
    if l1.is_finite() {
        Ok(l1)
    } else {
        Err(LearnError::NonFinite { component: "l1" })
    }
}

// pipeline, loss, and (amplitude gradient, temperature gradient)
type SingleImage = (FilterPipeline, LossBreakdown, Option<(Vec<f64>, f64)>);

fn single_image(
    x: &Image,
    params: &FilterParams,
    cfg: &LearnConfig,
    scorer: &dyn Scorer,
    target: usize,
    want_grad: bool,
) -> Result<SingleImage, LearnError> {
    cfg.validate()?;
    if target >= scorer.n_classes() {
        return Err(LearnError::Config(format!("target class {target} out of range")));
    }
    if !(params.temperature > 0.0 && params.temperature.is_finite()) {
        return Err(LearnError::NonFinite {
            component: "temperature",
        });
    }
    let pipeline = FilterPipeline::new(params.theta.rows, params.theta.cols, cfg.smooth_gamma);
    let prepared = pipeline.prepare(x)?;
    let filter = pipeline.filter(&params.theta.values)?;
    let eval = pipeline.evaluate(
        &prepared,
        &filter,
        scorer,
        params.temperature,
        |_| Ok(target),
        want_grad,
    )?;
    let l1 = l1_term(&params.theta.values, cfg.l1_weight)?;
    let loss = LossBreakdown {
        total: eval.cross_entropy + l1,
        cross_entropy: eval.cross_entropy,
        l1,
    };
    Ok((pipeline, loss, eval.grads))
}

/// Loss of one image against one target class.
pub fn forward_loss(
    x: &Image,
    params: &FilterParams,
    cfg: &LearnConfig,
    scorer: &dyn Scorer,
    target: usize,
) -> Result<LossBreakdown, LearnError> {
    single_image(x, params, cfg, scorer, target, false).map(|(_, loss, _)| loss)
}

/// Exact gradient of [`forward_loss`] with respect to `theta` and the
/// temperature. The L1 subgradient at exactly zero is taken as 0.
pub fn gradient(
    x: &Image,
    params: &FilterParams,
    cfg: &LearnConfig,
    scorer: &dyn Scorer,
    target: usize,
) -> Result<FilterGradient, LearnError> {
    let (pipeline, _, grads) = single_image(x, params, cfg, scorer, target, true)?;
    let (grad_amplitudes, temperature) = grads.expect("gradient requested");
    let mut theta = pipeline.theta_gradient(&grad_amplitudes);
    for (g, &t) in theta.iter_mut().zip(&params.theta.values) {
        *g += cfg.l1_weight * l1_subgradient(t);
    }
    Ok(FilterGradient { theta, temperature })
}

/// Images with true classes, tied to columns of human response matrices.
#[derive(Debug, Clone)]
pub struct LearningSet {
    pub images: Vec<Image>,
    pub true_classes: Vec<usize>,
    /// `(condition id, stimulus column)` of each image.
    pub placement: Vec<(String, usize)>,
    pub humans: ConditionSet,
    pub weights: DatasetWeights,
}

impl LearningSet {
    /// Builds the set from human trials and one image per stimulus id.
    /// `classes` fixes the scorer's class order.
    pub fn from_trials(
        trials: &[TrialRecord],
        images: &BTreeMap<String, Image>,
        classes: &[String],
    ) -> Result<Self, LearnError> {
        let humans = build_matrices(trials).map_err(|e| LearnError::Dataset(e.to_string()))?;
        let weights = DatasetWeights::from_conditions(&humans);
        let mut set = Self {
            images: Vec::new(),
            true_classes: Vec::new(),
            placement: Vec::new(),
            humans: ConditionSet::new(),
            weights,
        };
        for (condition, m) in &humans {
            for (column, (stimulus, truth)) in m.stimulus_ids.iter().zip(&m.true_classes).enumerate() {
                let image = images
                    .get(stimulus)
                    .ok_or_else(|| LearnError::Dataset(format!("no image for stimulus {stimulus:?}")))?;
                let class = classes
                    .iter()
                    .position(|c| c == truth)
                    .ok_or_else(|| LearnError::Dataset(format!("class {truth:?} unknown to the scorer")))?;
                set.images.push(image.clone());
                set.true_classes.push(class);
                set.placement.push((condition.clone(), column));
            }
        }
        set.humans = humans;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self, n_classes: usize) -> Result<(), LearnError> {
        let n = self.images.len();
        if n == 0 {
            return Err(LearnError::Dataset("no images".into()));
        }
        if self.true_classes.len() != n || self.placement.len() != n {
            return Err(LearnError::Dataset(
                "images, classes and placements differ in length".into(),
            ));
        }
        let first = &self.images[0];
        let shape = (first.width(), first.height(), first.channels());
        if self
            .images
            .iter()
            .any(|i| (i.width(), i.height(), i.channels()) != shape)
        {
            return Err(LearnError::Dataset("images differ in shape".into()));
        }
        if let Some(c) = self.true_classes.iter().find(|&&c| c >= n_classes) {
            return Err(LearnError::Dataset(format!(
                "class {c} outside the scorer's {n_classes} classes"
            )));
        }
        let mut seen: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for (condition, column) in &self.placement {
            let m = self
                .humans
                .get(condition)
                .ok_or_else(|| LearnError::Dataset(format!("unknown condition {condition:?}")))?;
            let slots = seen.entry(condition).or_insert_with(|| vec![false; m.n_stimuli()]);
            match slots.get_mut(*column) {
                Some(slot) if !*slot => *slot = true,
                Some(_) => return Err(LearnError::Dataset(format!("{condition:?} column {column} used twice"))),
                None => return Err(LearnError::Dataset(format!("{condition:?} has no column {column}"))),
            }
        }
        for condition in self.weights.conditions() {
            if !seen.get(condition).is_some_and(|s| s.iter().all(|&b| b)) {
                return Err(LearnError::Dataset(format!(
                    "condition {condition:?} is not fully covered by images"
                )));
            }
        }
        Ok(())
    }

    /// Model correctness laid out per condition.
    pub fn responses(&self, correct: &[bool]) -> ModelResponses {
        let mut out: ModelResponses = self
            .humans
            .iter()
            .map(|(c, m)| (c.clone(), vec![false; m.n_stimuli()]))
            .collect();
        for ((condition, column), &ok) in self.placement.iter().zip(correct) {
            out.get_mut(condition).expect("validated placement")[*column] = ok;
        }
        out
    }

    /// Per image, the response of each condition's maximal-consistency
    /// responder.
    pub fn ideal_responses(&self) -> Result<Vec<bool>, LearnError> {
        let mut best: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for condition in self.weights.conditions() {
            let sweep = condition_sweep(&self.humans[condition]);
            let optimum = best_of_sweep(&sweep)
                .ok_or_else(|| LearnError::Dataset(format!("condition {condition:?} has no defined kappa")))?;
            best.insert(condition, optimum.s.clone());
        }
        self.placement
            .iter()
            .map(|(c, col)| {
                best.get(c.as_str())
                    .map(|s| s[*col])
                    .ok_or_else(|| LearnError::Dataset(format!("condition {c:?} is not weighted")))
            })
            .collect()
    }

    pub fn report(&self, correct: &[bool]) -> Result<AlignmentReport, LearnError> {
        Ok(alignment_report(
            &self.humans,
            &self.weights,
            &self.responses(correct),
            &[],
            ReportOptions::default(),
        )?)
    }
}

/// Classifies the filtered images and scores them against the humans.
/// The filtered images are not clamped, matching training.
pub fn evaluate_filter(
    filter: &SpectralFilter,
    set: &LearningSet,
    scorer: &dyn Scorer,
) -> Result<AlignmentReport, LearnError> {
    set.validate(scorer.n_classes())?;
    let pipeline = FilterPipeline::for_image(&set.images[0], 0.0)?;
    let correct = set
        .images
        .iter()
        .zip(&set.true_classes)
        .map(|(img, &truth)| {
            let filtered = pipeline.apply(&pipeline.prepare(img)?, filter);
            Ok(argmax(&scorer.scores(&filtered)) == truth)
        })
        .collect::<Result<Vec<bool>, LearnError>>()?;
    set.report(&correct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Number of completed epochs when this state was evaluated.
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: f64,
    pub l1: f64,
    /// `None` when kappa is undefined in every condition.
    pub error_consistency: Option<f64>,
    pub accuracy: f64,
    pub temperature: f64,
    pub symmetry_residue: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Raw parameters at the best epoch.
    pub theta: Quadrant,
    /// Blurred quadrant at the best epoch; this is what gets expanded.
    pub smoothed: Quadrant,
    pub filter: SpectralFilter,
    pub temperature: f64,
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
    pub snapshots: Vec<(usize, Quadrant)>,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.trace[self.best_epoch]
    }
}

/// Optimizes the filter over the whole set and returns the state with the
/// highest training-set error consistency (earliest on ties).
pub fn train(set: &LearningSet, cfg: &LearnConfig, scorer: &dyn Scorer) -> Result<TrainOutcome, LearnError> {
    cfg.validate()?;
    set.validate(scorer.n_classes())?;
    if scorer.n_classes() < 2 {
        return Err(LearnError::ImpossibleTarget { stimulus: 0 });
    }
    let pipeline = FilterPipeline::for_image(&set.images[0], cfg.smooth_gamma)?;
    let prepared = set
        .images
        .iter()
        .map(|img| pipeline.prepare(img))
        .collect::<Result<Vec<_>, _>>()?;
    let ideal = set.ideal_responses()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.init_noise_variance.sqrt()).map_err(|e| LearnError::Config(e.to_string()))?;
    let (rows, cols) = (pipeline.rows, pipeline.cols);
    let n_theta = rows * cols;
    // theta followed by log-temperature
    let mut params: Vec<f64> = (0..n_theta).map(|_| 1.0 + noise.sample(&mut rng)).collect();
    params.push(cfg.initial_temperature.ln());
    let mut adam = Adam::new(params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

    let n = set.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut snapshots = Vec::new();
    let mut best: Option<(usize, Vec<f64>)> = None;
    let mut best_ec = f64::NEG_INFINITY;

    for epoch in 0..=cfg.epochs {
        let theta = &params[..n_theta];
        let tau = params[n_theta].exp();
        let filter = pipeline.filter(theta)?;
        let mut logits = Vec::with_capacity(n);
        let mut correct = Vec::with_capacity(n);
        let mut cross_entropy = 0.0;
        for (i, p) in prepared.iter().enumerate() {
            let truth = set.true_classes[i];
            let eval = pipeline.evaluate(
                p,
                &filter,
                scorer,
                tau,
                |z| target_for(ideal[i], z, truth).ok_or(LearnError::ImpossibleTarget { stimulus: i }),
                false,
            )?;
            cross_entropy += eval.cross_entropy / n as f64;
            correct.push(argmax(&eval.scores) == truth);
            logits.push(eval.scores);
        }
        let l1 = l1_term(theta, cfg.l1_weight)?;
        let report = set.report(&correct);
        let error_consistency = match report {
            Ok(r) => Some(r.error_consistency),
            Err(LearnError::Metrics(MetricsError::NothingToAggregate)) => None,
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            loss: cross_entropy + l1,
            cross_entropy,
            l1,
            error_consistency,
            accuracy: correct.iter().filter(|&&c| c).count() as f64 / n as f64,
            temperature: tau,
            symmetry_residue: filter.symmetry_residue(),
        };
        let loss = record.loss;
        trace.push(record);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(LearnError::Diverged { epoch, loss, trace });
        }
        let ec = error_consistency.unwrap_or(f64::NEG_INFINITY);
        if best.is_none() || ec > best_ec {
            best_ec = ec;
            best = Some((epoch, params.clone()));
        }
        if cfg.snapshot_every.is_some_and(|every| epoch % every == 0) {
            snapshots.push((epoch, Quadrant::new(rows, cols, theta.to_vec())));
        }
        if epoch == cfg.epochs {
            break;
        }

        let targets = build_targets(&ideal, &logits, &set.true_classes)?;
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let tau = params[n_theta].exp();
            let filter = pipeline.filter(&params[..n_theta])?;
            let mut grad_amplitudes = vec![0.0; filter.amplitudes.len()];
            let mut grad_tau = 0.0;
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let truth = set.true_classes[i];
                let chosen = |z: &[f64]| match cfg.refresh {
                    TargetRefresh::PerEpoch => Ok(targets[i]),
                    TargetRefresh::PerStep => {
                        target_for(ideal[i], z, truth).ok_or(LearnError::ImpossibleTarget { stimulus: i })
                    }
                };
                let eval = pipeline.evaluate(&prepared[i], &filter, scorer, tau, chosen, true)?;
                let (ga, gt) = eval.grads.expect("gradient requested");
                grad_amplitudes.iter_mut().zip(&ga).for_each(|(a, g)| *a += scale * g);
                grad_tau += scale * gt;
                debug_assert!(eval.target < scorer.n_classes());
            }
            let mut grads = pipeline.theta_gradient(&grad_amplitudes);
            for (g, &t) in grads.iter_mut().zip(&params[..n_theta]) {
                *g += cfg.l1_weight * l1_subgradient(t);
            }
            // d/d(log tau) = tau * d/d tau
            grads.push(if cfg.learn_temperature { grad_tau * tau } else { 0.0 });
            adam.step(&mut params, &grads);
            if params.iter().any(|v| !v.is_finite()) {
                return Err(LearnError::Diverged {
                    epoch,
                    loss: f64::NAN,
                    trace,
                });
            }
        }
    }

    let (best_epoch, best_params) = best.expect("at least one epoch evaluated");
    let theta = Quadrant::new(rows, cols, best_params[..n_theta].to_vec());
    let smoothed = pipeline.smoothed(&theta.values);
    let filter = expand_hermitian(&smoothed)?;
    Ok(TrainOutcome {
        theta,
        smoothed,
        filter,
        temperature: best_params[n_theta].exp(),
        best_epoch,
        trace,
        snapshots,
    })
}

/// Share of total absolute amplitude held by bins with radius below
/// `radius` cycles per image.
pub fn amplitude_mass_below(filter: &SpectralFilter, radius: f64) -> f64 {
    let (mut inside, mut total) = (0.0, 0.0);
    for u in 0..filter.height {
        for v in 0..filter.width {
            let a = filter.amplitude(u, v).abs();
            total += a;
            if bin_radius(u, v, filter.height, filter.width) < radius {
                inside += a;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}
