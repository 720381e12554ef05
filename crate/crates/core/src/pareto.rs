//! Exact accuracy/consistency trade-off of an ideal responder.
//!
//! For a fixed number `k` of correct responses the mean kappa against a
//! condition's observers is linear in the response vector, so the best
//! vector with `k` ones takes the `k` largest linear weights. Sweeping `k`
//! gives every condition's optimum per accuracy level; folding the
//! conditions together with Minkowski sums and pruning dominated points
//! yields the exact dataset-level frontier under hierarchical averaging.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ingest::{ConditionResponseMatrix, ConditionSet, DatasetWeights};
use crate::metrics::{condition_error_consistency_with, MetricsError, UndefinedPolicy, KAPPA_TOLERANCE};

/// Pre-prune point budget per fold step.
pub const DEFAULT_POINT_CAP: usize = 10_000_000;

/// Tolerance for treating two frontier coordinates as equal.
pub const POINT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParetoError {
    #[error("frontier step for condition {condition:?} would create {points} points (cap {cap})")]
    Capacity {
        condition: String,
        points: usize,
        cap: usize,
    },
    #[error("condition {condition:?} has no response vector with a defined kappa")]
    NoAchievablePoint { condition: String },
    #[error("condition {condition:?} is not part of the dataset weights")]
    MissingCondition { condition: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Per-stimulus weights of the linearized mean-kappa objective at `p = k/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights {
    pub weights: Vec<f64>,
    /// Observers left out because their denominator vanishes at this `p`.
    pub skipped_observers: usize,
}

pub fn linear_weights(matrix: &ConditionResponseMatrix, k: usize) -> LinearWeights {
    let n_stimuli = matrix.n_stimuli();
    assert!(k <= n_stimuli, "k = {k} exceeds N = {n_stimuli}");
    let p = if n_stimuli == 0 {
        0.0
    } else {
        k as f64 / n_stimuli as f64
    };
    let mut weights = vec![0.0; n_stimuli];
    let mut skipped_observers = 0;
    for (j, row) in matrix.correctness.iter().enumerate() {
        let q = matrix.observer_accuracy(j);
        let denominator = q + (1.0 - 2.0 * q) * p;
        if denominator.abs() < KAPPA_TOLERANCE {
            skipped_observers += 1;
            continue;
        }
        for (w, &t) in weights.iter_mut().zip(row) {
            *w += (f64::from(u8::from(t)) - q) / denominator;
        }
    }
    LinearWeights {
        weights,
        skipped_observers,
    }
}

/// Best response vector with exactly `k` correct responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOptimum {
    pub k: usize,
    pub s: Vec<bool>,
    /// `None` when every observer's kappa is undefined at this `k`.
    pub kappa_mean: Option<f64>,
    pub accuracy: f64,
    pub dropped_pairs: usize,
}

pub fn optimal_for_k(matrix: &ConditionResponseMatrix, k: usize) -> ConditionOptimum {
    optimal_for_k_with(matrix, k, UndefinedPolicy::Drop)
}

pub fn optimal_for_k_with(matrix: &ConditionResponseMatrix, k: usize, policy: UndefinedPolicy) -> ConditionOptimum {
    let n_stimuli = matrix.n_stimuli();
    let LinearWeights { weights, .. } = linear_weights(matrix, k);
    let mut order: Vec<usize> = (0..n_stimuli).collect();
    // stable: equal weights keep ascending stimulus index
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let mut s = vec![false; n_stimuli];
    for &i in &order[..k] {
        s[i] = true;
    }
    let (kappa_mean, dropped_pairs) = match condition_error_consistency_with(&s, matrix, policy) {
        Ok(c) => (Some(c.kappa), c.dropped_pairs),
        Err(_) => (None, matrix.n_observers()),
    };
    ConditionOptimum {
        k,
        s,
        kappa_mean,
        accuracy: if n_stimuli == 0 {
            0.0
        } else {
            k as f64 / n_stimuli as f64
        },
        dropped_pairs,
    }
}

/// One optimum per `k = 0..=N`.
pub fn condition_sweep(matrix: &ConditionResponseMatrix) -> Vec<ConditionOptimum> {
    condition_sweep_with(matrix, UndefinedPolicy::Drop)
}

pub fn condition_sweep_with(matrix: &ConditionResponseMatrix, policy: UndefinedPolicy) -> Vec<ConditionOptimum> {
    (0..=matrix.n_stimuli())
        .map(|k| optimal_for_k_with(matrix, k, policy))
        .collect()
}

/// Highest defined mean kappa of a sweep; ties go to the higher accuracy.
pub fn best_of_sweep(sweep: &[ConditionOptimum]) -> Option<&ConditionOptimum> {
    sweep
        .iter()
        .filter(|o| o.kappa_mean.is_some())
        .fold(None, |best: Option<&ConditionOptimum>, o| match best {
            Some(b) if b.kappa_mean.unwrap() > o.kappa_mean.unwrap() + KAPPA_TOLERANCE => Some(b),
            _ => Some(o),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub kappa: f64,
    pub accuracy: f64,
}

impl ParetoPoint {
    pub fn new(kappa: f64, accuracy: f64) -> Self {
        Self { kappa, accuracy }
    }
}

/// Indices of the non-dominated points, ordered by ascending accuracy.
///
/// A point is dominated when another has kappa and accuracy at least as
/// large with one strictly larger. Coordinates within [`POINT_TOLERANCE`]
/// count as equal; of several equal points only one survives.
pub fn prune_indices(points: &[ParetoPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pb.accuracy
            .total_cmp(&pa.accuracy)
            .then(pb.kappa.total_cmp(&pa.kappa))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    let mut best_kappa = f64::NEG_INFINITY;
    for i in order {
        let point = points[i];
        if point.kappa <= best_kappa + POINT_TOLERANCE {
            continue;
        }
        // a kept point at (numerically) the same accuracy but lower kappa
        while let Some(&last) = kept.last() {
            if points[last].accuracy - point.accuracy <= POINT_TOLERANCE {
                kept.pop();
            } else {
                break;
            }
        }
        best_kappa = point.kappa;
        kept.push(i);
    }
    kept.reverse();
    kept
}

pub fn prune_dominated(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    prune_indices(points).into_iter().map(|i| points[i]).collect()
}

/// One achievable (k, kappa) option of a condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionOption {
    pub k: usize,
    pub kappa: f64,
    pub accuracy: f64,
}

/// A condition's options together with its weight in the final average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCandidates {
    pub condition_id: String,
    pub weight: f64,
    pub options: Vec<ConditionOption>,
}

impl ConditionCandidates {
    /// Defined sweep entries, unscaled.
    pub fn from_sweep(condition_id: &str, weight: f64, sweep: &[ConditionOptimum]) -> Self {
        Self {
            condition_id: condition_id.to_owned(),
            weight,
            options: sweep
                .iter()
                .filter_map(|o| {
                    o.kappa_mean.map(|kappa| ConditionOption {
                        k: o.k,
                        kappa,
                        accuracy: o.accuracy,
                    })
                })
                .collect(),
        }
    }
}

/// The choice one frontier point makes in one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionChoice {
    pub condition_id: String,
    pub k: usize,
    pub kappa: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFrontier {
    /// Ascending accuracy, strictly decreasing kappa.
    pub points: Vec<ParetoPoint>,
    conditions: Vec<String>,
    options: Vec<Vec<ConditionOption>>,
    // per fold step, for each surviving point: (parent index, option index)
    steps: Vec<Vec<(u32, u32)>>,
}

impl ParetoFrontier {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The point of maximal kappa.
    pub fn max_consistency(&self) -> Option<(usize, ParetoPoint)> {
        self.points.iter().copied().enumerate().max_by(|a, b| {
            a.1.kappa
                .total_cmp(&b.1.kappa)
                .then(a.1.accuracy.total_cmp(&b.1.accuracy))
        })
    }

    /// Per-condition choices that realise frontier point `index`.
    pub fn certificate(&self, index: usize) -> Vec<ConditionChoice> {
        let mut choices = Vec::with_capacity(self.steps.len());
        let mut current = index;
        for (step, links) in self.steps.iter().enumerate().rev() {
            let (parent, option) = links[current];
            let o = self.options[step][option as usize];
            choices.push(ConditionChoice {
                condition_id: self.conditions[step].clone(),
                k: o.k,
                kappa: o.kappa,
                accuracy: o.accuracy,
            });
            current = parent as usize;
        }
        choices.reverse();
        choices
    }

    /// CSV `accuracy,kappa`, ascending accuracy.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "accuracy,kappa")?;
        for p in &self.points {
            writeln!(out, "{},{}", p.accuracy, p.kappa)?;
        }
        Ok(())
    }
}

/// Folds the weighted per-condition options into the exact frontier,
/// starting from the single point (0, 0).
pub fn frontier_expand(candidates: &[ConditionCandidates], cap: usize) -> Result<ParetoFrontier, ParetoError> {
    let mut current = vec![ParetoPoint::new(0.0, 0.0)];
    let mut conditions = Vec::with_capacity(candidates.len());
    let mut options = Vec::with_capacity(candidates.len());
    let mut steps = Vec::with_capacity(candidates.len());

    for c in candidates {
        let scaled: Vec<ParetoPoint> = c
            .options
            .iter()
            .map(|o| ParetoPoint::new(o.kappa * c.weight, o.accuracy * c.weight))
            .collect();
        let keep = prune_indices(&scaled);
        if keep.is_empty() {
            return Err(ParetoError::NoAchievablePoint {
                condition: c.condition_id.clone(),
            });
        }
        let total = current.len().saturating_mul(keep.len());
        if total > cap {
            return Err(ParetoError::Capacity {
                condition: c.condition_id.clone(),
                points: total,
                cap,
            });
        }
        let mut sums = Vec::with_capacity(total);
        let mut links = Vec::with_capacity(total);
        for (parent, base) in current.iter().enumerate() {
            for (slot, &o) in keep.iter().enumerate() {
                let add = scaled[o];
                sums.push(ParetoPoint::new(base.kappa + add.kappa, base.accuracy + add.accuracy));
                links.push((parent as u32, slot as u32));
            }
        }
        let survivors = prune_indices(&sums);
        current = survivors.iter().map(|&i| sums[i]).collect();
        steps.push(survivors.iter().map(|&i| links[i]).collect());
        conditions.push(c.condition_id.clone());
        options.push(keep.iter().map(|&o| c.options[o]).collect());
    }

    Ok(ParetoFrontier {
        points: current,
        conditions,
        options,
        steps,
    })
}

/// Frontier of a whole dataset: sweep every condition, weight it by
/// `1/(C * E)`, fold.
pub fn dataset_frontier(
    matrices: &ConditionSet,
    weights: &DatasetWeights,
    policy: UndefinedPolicy,
    cap: usize,
) -> Result<ParetoFrontier, ParetoError> {
    let mut candidates = Vec::with_capacity(weights.condition_count());
    for condition in weights.conditions() {
        let matrix = matrices.get(condition).ok_or_else(|| ParetoError::MissingCondition {
            condition: condition.to_owned(),
        })?;
        let weight = weights.global_weight(condition).expect("condition listed in weights");
        let sweep = condition_sweep_with(matrix, policy);
        candidates.push(ConditionCandidates::from_sweep(condition, weight, &sweep));
    }
    frontier_expand(&candidates, cap)
}
