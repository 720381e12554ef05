//! Behavioral alignment metrics: error consistency (Cohen's kappa on
//! correctness sequences), shape bias and OOD accuracy, plus the
//! benchmark's hierarchical averaging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{accuracy, ConditionResponseMatrix, ConditionSet, DatasetWeights, TrialRecord};

/// Absolute tolerance used when comparing kappa values and when deciding
/// that a kappa denominator vanishes.
pub const KAPPA_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("sequence lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty sequence")]
    Empty,
    #[error("kappa undefined: both classifiers constant at the same accuracy")]
    UndefinedKappa,
    #[error("condition {condition:?}: every kappa pair is undefined")]
    UndefinedCondition { condition: String },
    #[error("condition {condition:?} has {n} observer(s); at least 2 required")]
    InsufficientObservers { condition: String, n: usize },
    #[error("no value for condition {condition:?}")]
    MissingValue { condition: String },
    #[error("nothing to aggregate")]
    NothingToAggregate,
    #[error("shape bias undefined: no trial was answered with either cue")]
    UndefinedShapeBias,
    #[error("stimulus {stimulus:?} is not a cue-conflict trial (needs distinct shape and texture classes)")]
    NotCueConflict { stimulus: String },
    #[error("model responses do not align with human data: {}", .diffs.join("; "))]
    Alignment { diffs: Vec<String> },
}

/// How undefined kappa pairs enter a condition mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UndefinedPolicy {
    /// Leave them out of the mean and count them.
    #[default]
    Drop,
    /// Count them as kappa = 0.
    ImputeZero,
}

/// How per-condition values become one number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Mean within each experiment, then mean over experiments.
    #[default]
    Hierarchical,
    /// Plain mean over all conditions.
    Flat,
}

/// Proportions entering Cohen's kappa for two binary correctness sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaInputs {
    /// Accuracy of the first classifier.
    pub p: f64,
    /// Accuracy of the second classifier.
    pub q: f64,
    /// Fraction of trials both got right.
    pub r: f64,
    pub p_obs: f64,
    pub p_exp: f64,
    degenerate: bool,
}

impl KappaInputs {
    pub fn from_sequences(a: &[bool], b: &[bool]) -> Result<Self, MetricsError> {
        if a.len() != b.len() {
            return Err(MetricsError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        if a.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = a.len();
        let (mut ca, mut cb, mut both, mut agree) = (0usize, 0usize, 0usize, 0usize);
        for (&x, &y) in a.iter().zip(b) {
            ca += x as usize;
            cb += y as usize;
            both += (x && y) as usize;
            agree += (x == y) as usize;
        }
        let nf = n as f64;
        let (p, q) = (ca as f64 / nf, cb as f64 / nf);
        Ok(Self {
            p,
            q,
            r: both as f64 / nf,
            p_obs: agree as f64 / nf,
            p_exp: p * q + (1.0 - p) * (1.0 - q),
            degenerate: (ca == 0 && cb == 0) || (ca == n && cb == n),
        })
    }

    pub fn kappa(&self) -> Result<f64, MetricsError> {
        if self.degenerate {
            return Err(MetricsError::UndefinedKappa);
        }
        Ok((self.p_obs - self.p_exp) / (1.0 - self.p_exp))
    }
}

/// Cohen's kappa between two correctness sequences,
/// `(p_obs - p_exp) / (1 - p_exp)`.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64, MetricsError> {
    KappaInputs::from_sequences(a, b)?.kappa()
}

/// Kappa from the two accuracies and the both-correct fraction:
/// `2 (r - p q) / (p + q - 2 p q)`.
pub fn kappa_reformulated(p: f64, q: f64, r: f64) -> Result<f64, MetricsError> {
    let denominator = p + q - 2.0 * p * q;
    if denominator.abs() < KAPPA_TOLERANCE {
        return Err(MetricsError::UndefinedKappa);
    }
    Ok(2.0 * (r - p * q) / denominator)
}

/// Mean kappa of one response sequence against a set of observer rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionConsistency {
    pub kappa: f64,
    pub defined_pairs: usize,
    pub dropped_pairs: usize,
}

pub fn condition_error_consistency(
    model: &[bool],
    matrix: &ConditionResponseMatrix,
) -> Result<ConditionConsistency, MetricsError> {
    condition_error_consistency_with(model, matrix, UndefinedPolicy::Drop)
}

pub fn condition_error_consistency_with(
    model: &[bool],
    matrix: &ConditionResponseMatrix,
    policy: UndefinedPolicy,
) -> Result<ConditionConsistency, MetricsError> {
    mean_kappa(model, matrix.correctness.iter().map(Vec::as_slice), policy).map_err(|e| match e {
        MetricsError::UndefinedKappa => MetricsError::UndefinedCondition {
            condition: matrix.condition_id.clone(),
        },
        other => other,
    })
}

fn mean_kappa<'a>(
    model: &[bool],
    rows: impl Iterator<Item = &'a [bool]>,
    policy: UndefinedPolicy,
) -> Result<ConditionConsistency, MetricsError> {
    let (mut sum, mut defined, mut dropped) = (0.0, 0usize, 0usize);
    for row in rows {
        match cohens_kappa(model, row) {
            Ok(k) => {
                sum += k;
                defined += 1;
            }
            Err(MetricsError::UndefinedKappa) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let denominator = match policy {
        UndefinedPolicy::Drop => defined,
        UndefinedPolicy::ImputeZero => defined + dropped,
    };
    if denominator == 0 {
        return Err(MetricsError::UndefinedKappa);
    }
    Ok(ConditionConsistency {
        kappa: sum / denominator as f64,
        defined_pairs: defined,
        dropped_pairs: dropped,
    })
}

/// Mean within each experiment, then mean across experiments.
pub fn hierarchical_average(values: &BTreeMap<String, f64>, weights: &DatasetWeights) -> Result<f64, MetricsError> {
    aggregate(values, weights, Aggregation::Hierarchical)
}

pub fn aggregate(
    values: &BTreeMap<String, f64>,
    weights: &DatasetWeights,
    mode: Aggregation,
) -> Result<f64, MetricsError> {
    let lookup = |condition: &str| {
        values
            .get(condition)
            .copied()
            .ok_or_else(|| MetricsError::MissingValue {
                condition: condition.to_owned(),
            })
    };
    match mode {
        Aggregation::Hierarchical => {
            let mut experiment_means = Vec::with_capacity(weights.experiment_count());
            for (_, conditions) in weights.experiments() {
                if conditions.is_empty() {
                    continue;
                }
                let mut sum = 0.0;
                for c in conditions {
                    sum += lookup(c)?;
                }
                experiment_means.push(sum / conditions.len() as f64);
            }
            if experiment_means.is_empty() {
                return Err(MetricsError::NothingToAggregate);
            }
            Ok(experiment_means.iter().sum::<f64>() / experiment_means.len() as f64)
        }
        Aggregation::Flat => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for c in weights.conditions() {
                sum += lookup(c)?;
                count += 1;
            }
            if count == 0 {
                return Err(MetricsError::NothingToAggregate);
            }
            Ok(sum / count as f64)
        }
    }
}

/// Each observer's mean kappa to the other `n - 1` observers, averaged over
/// observers. Observers whose pairs are all undefined are left out.
pub fn inter_human_condition(matrix: &ConditionResponseMatrix) -> Result<f64, MetricsError> {
    let n = matrix.n_observers();
    if n < 2 {
        return Err(MetricsError::InsufficientObservers {
            condition: matrix.condition_id.clone(),
            n,
        });
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for j in 0..n {
        let others = (0..n).filter(|&o| o != j).map(|o| matrix.row(o));
        match mean_kappa(matrix.row(j), others, UndefinedPolicy::Drop) {
            Ok(c) => {
                sum += c.kappa;
                counted += 1;
            }
            Err(MetricsError::UndefinedKappa) => {}
            Err(e) => return Err(e),
        }
    }
    if counted == 0 {
        return Err(MetricsError::UndefinedCondition {
            condition: matrix.condition_id.clone(),
        });
    }
    Ok(sum / counted as f64)
}

pub fn inter_human_consistency(matrices: &ConditionSet, weights: &DatasetWeights) -> Result<f64, MetricsError> {
    let mut values = BTreeMap::new();
    for condition in weights.conditions() {
        let matrix = matrices.get(condition).ok_or_else(|| MetricsError::MissingValue {
            condition: condition.to_owned(),
        })?;
        values.insert(condition.to_owned(), inter_human_condition(matrix)?);
    }
    hierarchical_average(&values, weights)
}

/// Fraction of cue-conflict trials decided by shape, among trials decided by
/// either cue.
pub fn shape_bias(trials: &[TrialRecord]) -> Result<f64, MetricsError> {
    let (mut shape, mut texture) = (0usize, 0usize);
    for t in trials {
        let (Some(s), Some(x)) = (&t.shape_class, &t.texture_class) else {
            return Err(MetricsError::NotCueConflict {
                stimulus: t.stimulus_id.clone(),
            });
        };
        if s == x {
            return Err(MetricsError::NotCueConflict {
                stimulus: t.stimulus_id.clone(),
            });
        }
        if &t.predicted_class == s {
            shape += 1;
        } else if &t.predicted_class == x {
            texture += 1;
        }
    }
    if shape + texture == 0 {
        return Err(MetricsError::UndefinedShapeBias);
    }
    Ok(shape as f64 / (shape + texture) as f64)
}

/// Model correctness per condition, in the stimulus order of the matching
/// human matrix.
pub type ModelResponses = BTreeMap<String, Vec<bool>>;

pub fn ood_accuracy(model: &ModelResponses, weights: &DatasetWeights, mode: Aggregation) -> Result<f64, MetricsError> {
    let values = model
        .iter()
        .map(|(c, row)| (c.clone(), accuracy(row)))
        .collect::<BTreeMap<_, _>>();
    aggregate(&values, weights, mode)
}

/// Matches single-observer model matrices to the human conditions, checking
/// that stimulus sets agree.
pub fn align_model(humans: &ConditionSet, model: &ConditionSet) -> Result<ModelResponses, MetricsError> {
    let mut diffs = Vec::new();
    let mut out = ModelResponses::new();
    for (condition, human) in humans {
        let Some(m) = model.get(condition) else {
            diffs.push(format!("condition {condition:?} missing from model responses"));
            continue;
        };
        if m.n_observers() != 1 {
            diffs.push(format!(
                "condition {condition:?}: expected one model observer, found {}",
                m.n_observers()
            ));
            continue;
        }
        if m.stimulus_ids != human.stimulus_ids {
            let only_model: Vec<_> = m
                .stimulus_ids
                .iter()
                .filter(|s| !human.stimulus_ids.contains(s))
                .collect();
            let only_human: Vec<_> = human
                .stimulus_ids
                .iter()
                .filter(|s| !m.stimulus_ids.contains(s))
                .collect();
            diffs.push(format!(
                "condition {condition:?}: stimuli only in model {only_model:?}, only in humans {only_human:?}"
            ));
            continue;
        }
        out.insert(condition.clone(), m.correctness[0].clone());
    }
    if diffs.is_empty() {
        Ok(out)
    } else {
        Err(MetricsError::Alignment { diffs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `None` when every pair in the condition is undefined.
    pub kappa: Option<f64>,
    pub accuracy: f64,
    pub dropped_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub error_consistency: f64,
    /// `None` when no cue-conflict trials were supplied.
    pub shape_bias: Option<f64>,
    pub ood_accuracy: f64,
    pub per_condition: BTreeMap<String, ConditionReport>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub undefined: UndefinedPolicy,
    pub accuracy_aggregation: Aggregation,
}

/// Computes all three metrics for one model. Conditions whose kappa is
/// undefined for every human are reported with `kappa: None` and left out of
/// the error-consistency average.
pub fn alignment_report(
    humans: &ConditionSet,
    weights: &DatasetWeights,
    model: &ModelResponses,
    cue_conflict: &[TrialRecord],
    options: ReportOptions,
) -> Result<AlignmentReport, MetricsError> {
    let mut per_condition = BTreeMap::new();
    let mut kappas = BTreeMap::new();
    for condition in weights.conditions() {
        let human = humans.get(condition).ok_or_else(|| MetricsError::MissingValue {
            condition: condition.to_owned(),
        })?;
        let row = model.get(condition).ok_or_else(|| MetricsError::MissingValue {
            condition: condition.to_owned(),
        })?;
        let (kappa, dropped) = match condition_error_consistency_with(row, human, options.undefined) {
            Ok(c) => (Some(c.kappa), c.dropped_pairs),
            Err(MetricsError::UndefinedCondition { .. }) => (None, human.n_observers()),
            Err(e) => return Err(e),
        };
        if let Some(k) = kappa {
            kappas.insert(condition.to_owned(), k);
        }
        per_condition.insert(
            condition.to_owned(),
            ConditionReport {
                kappa,
                accuracy: accuracy(row),
                dropped_pairs: dropped,
            },
        );
    }
    let defined_weights = DatasetWeights::from_pairs(weights.experiments().flat_map(|(e, cs)| {
        cs.iter()
            .filter(|c| kappas.contains_key(*c))
            .map(move |c| (e, c.as_str()))
    }));
    let error_consistency = hierarchical_average(&kappas, &defined_weights)?;
    let model_rows: ModelResponses = weights.conditions().map(|c| (c.to_owned(), model[c].clone())).collect();
    let ood_accuracy = ood_accuracy(&model_rows, weights, options.accuracy_aggregation)?;
    let shape_bias = if cue_conflict.is_empty() {
        None
    } else {
        Some(shape_bias(cue_conflict)?)
    };
    Ok(AlignmentReport {
        error_consistency,
        shape_bias,
        ood_accuracy,
        per_condition,
    })
}
