//! A small task whose class evidence lives at low spatial frequencies.
//!
//! Every image is mid-grey plus a class template built from a few
//! low-frequency gratings, scaled by a per-image strength. Synthetic
//! observers answer correctly when the strength is high enough, so both the
//! labels and the observers' errors depend only on the template band.
//!
//! Optionally a high-frequency grating whose orientation also encodes the
//! class is added with an independent strength. Observers ignore it.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LearnConfig, LearnError, LearningSet, LinearSoftmaxScorer, ScorerTraining};
use crate::imagefilter::Image;
use crate::ingest::{TrialRecord, BENCHMARK_CLASSES};

pub const EXPERIMENT_ID: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub size: usize,
    pub classes: usize,
    pub conditions: usize,
    /// Largest amplitude of the high-frequency class cue; 0 disables it.
    pub cue_amplitude: f64,
    pub stimuli_per_condition: usize,
    pub observers: usize,
    pub scorer_images: usize,
    /// Template gratings have radius in `[low_radius.0, low_radius.1]`
    /// cycles per image.
    pub low_radius: (f64, f64),
    pub cue_radius: f64,
    pub template_contrast: f64,
    pub human_threshold: f64,
    pub human_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 64,
            classes: 4,
            conditions: 2,
            cue_amplitude: 0.0,
            stimuli_per_condition: 64,
            observers: 3,
            scorer_images: 400,
            low_radius: (2.0, 8.0),
            cue_radius: 26.0,
            template_contrast: 0.2,
            human_threshold: 0.3,
            human_noise: 0.1,
            seed: 7,
        }
    }
}

/// Training settings sized for the default 64x64 task: a lighter quadrant
/// blur, a larger step and unit initial temperature.
pub fn learn_config(seed: u64) -> LearnConfig {
    LearnConfig {
        smooth_gamma: 2.0,
        learning_rate: 0.02,
        initial_temperature: 1.0,
        epochs: 200,
        seed,
        ..LearnConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub classes: Vec<String>,
    pub trials: Vec<TrialRecord>,
    /// Learning-set images keyed by stimulus id.
    pub images: BTreeMap<String, Image>,
    pub scorer_images: Vec<Image>,
    pub scorer_labels: Vec<usize>,
    /// Template strength of every learning-set stimulus.
    pub signal: BTreeMap<String, f64>,
}

impl SyntheticTask {
    pub fn learning_set(&self) -> Result<LearningSet, LearnError> {
        LearningSet::from_trials(&self.trials, &self.images, &self.classes)
    }

    pub fn fit_scorer(&self, training: ScorerTraining) -> Result<LinearSoftmaxScorer, LearnError> {
        let first = &self.scorer_images[0];
        LinearSoftmaxScorer::zeros(first.width(), first.height(), first.channels(), 1, self.classes.len()).fit(
            &self.scorer_images,
            &self.scorer_labels,
            training,
        )
    }
}

fn grating(size: usize, fy: f64, fx: f64, phase: f64) -> Vec<f64> {
    let n = size as f64;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            (2.0 * PI * (fy * y + fx * x) / n + phase).cos()
        })
        .collect()
}

// integer frequency with radius in [lo, hi]
fn ring_frequency(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> (f64, f64) {
    let top = hi.floor() as i64;
    loop {
        let fy = rng.random_range(-top..=top) as f64;
        let fx = rng.random_range(0..=top) as f64;
        let r = fy.hypot(fx);
        if r >= lo && r <= hi {
            return (fy, fx);
        }
    }
}

fn low_frequency_template(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Vec<f64> {
    let mut pattern = vec![0.0; cfg.size * cfg.size];
    for _ in 0..3 {
        let (fy, fx) = ring_frequency(rng, cfg.low_radius);
        let g = grating(cfg.size, fy, fx, rng.random_range(0.0..2.0 * PI));
        pattern.iter_mut().zip(&g).for_each(|(p, v)| *p += v);
    }
    let peak = pattern.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    pattern.iter_mut().for_each(|p| *p /= peak);
    pattern
}

fn cue_pattern(class: usize, cfg: &SyntheticConfig) -> Vec<f64> {
    let angle = PI * (class as f64 + 0.5) / cfg.classes as f64;
    let fy = (cfg.cue_radius * angle.sin()).round();
    let fx = (cfg.cue_radius * angle.cos()).round();
    grating(cfg.size, fy, fx, 0.0)
}

fn compose(template: &[f64], cue: &[f64], contrast: f64, cue_amplitude: f64, size: usize) -> Image {
    let data = template
        .iter()
        .zip(cue)
        .map(|(t, c)| (0.5 + contrast * t + cue_amplitude * c).clamp(0.0, 1.0))
        .collect();
    Image::from_data(size, size, 1, data)
}

fn wrong_class(rng: &mut ChaCha8Rng, truth: usize, classes: usize) -> usize {
    let offset = rng.random_range(1..classes);
    (truth + offset) % classes
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticTask, LearnError> {
    if cfg.classes < 2 || cfg.classes > BENCHMARK_CLASSES.len() {
        return Err(LearnError::Config(format!(
            "classes must be in [2, {}]",
            BENCHMARK_CLASSES.len()
        )));
    }
    let half = (cfg.size / 2) as f64;
    if cfg.size < 4 || cfg.size % 2 == 1 || cfg.cue_radius >= half || cfg.low_radius.1 >= half {
        return Err(LearnError::Config(
            "image size must be even and exceed twice every grating radius".into(),
        ));
    }
    if cfg.low_radius.0 > cfg.low_radius.1 {
        return Err(LearnError::Config("template radius range must be ordered".into()));
    }
    if cfg.conditions == 0 || cfg.stimuli_per_condition == 0 || cfg.observers == 0 || cfg.scorer_images == 0 {
        return Err(LearnError::Config(
            "need at least one condition, stimulus, observer and scorer image".into(),
        ));
    }
    let noise = Normal::new(0.0, cfg.human_noise).map_err(|e| LearnError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes: Vec<String> = BENCHMARK_CLASSES[..cfg.classes].iter().map(|s| s.to_string()).collect();
    let templates: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| low_frequency_template(&mut rng, cfg))
        .collect();
    let cues: Vec<Vec<f64>> = (0..cfg.classes).map(|c| cue_pattern(c, cfg)).collect();

    let mut scorer_images = Vec::with_capacity(cfg.scorer_images);
    let mut scorer_labels = Vec::with_capacity(cfg.scorer_images);
    for i in 0..cfg.scorer_images {
        let label = i % cfg.classes;
        let strength: f64 = rng.random();
        let cue_strength: f64 = rng.random();
        scorer_images.push(compose(
            &templates[label],
            &cues[label],
            cfg.template_contrast * strength,
            cfg.cue_amplitude * cue_strength,
            cfg.size,
        ));
        scorer_labels.push(label);
    }

    let mut trials = Vec::new();
    let mut images = BTreeMap::new();
    let mut signal = BTreeMap::new();
    for ci in 0..cfg.conditions {
        let condition = format!("block-{ci}");
        for i in 0..cfg.stimuli_per_condition {
            let stimulus = format!("{condition}-{i:03}");
            let truth = i % cfg.classes;
            let strength: f64 = rng.random();
            let cue_strength: f64 = rng.random();
            images.insert(
                stimulus.clone(),
                compose(
                    &templates[truth],
                    &cues[truth],
                    cfg.template_contrast * strength,
                    cfg.cue_amplitude * cue_strength,
                    cfg.size,
                ),
            );
            signal.insert(stimulus.clone(), strength);
            for j in 0..cfg.observers {
                let correct = strength + noise.sample(&mut rng) > cfg.human_threshold;
                let predicted = if correct {
                    truth
                } else {
                    wrong_class(&mut rng, truth, cfg.classes)
                };
                trials.push(TrialRecord {
                    experiment_id: EXPERIMENT_ID.to_owned(),
                    condition_id: condition.clone(),
                    observer_id: format!("subject-{j:02}"),
                    stimulus_id: stimulus.clone(),
                    predicted_class: classes[predicted].clone(),
                    true_class: classes[truth].clone(),
                    shape_class: None,
                    texture_class: None,
                });
            }
        }
    }

    Ok(SyntheticTask {
        classes,
        trials,
        images,
        scorer_images,
        scorer_labels,
        signal,
    })
}
