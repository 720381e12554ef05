//! Brute-force reference implementations.
//!
//! Everything here is deliberately naive and recomputes kappa, weights and
//! dominance from raw counts, so it can be used to check the fast paths in
//! [`crate::metrics`] and [`crate::pareto`].

use std::collections::BTreeMap;

use crate::ingest::{ConditionResponseMatrix, ConditionSet, DatasetWeights};
use crate::pareto::ParetoPoint;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("instance needs {required} evaluations, budget is {limit}")]
    Budget { required: u128, limit: u128 },
    #[error("non-finite evaluation at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("condition {0:?} missing from the matrices")]
    MissingCondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    pub max_vectors: u128,
    pub max_points: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_vectors: 1 << 20,
            max_points: 1 << 20,
        }
    }
}

impl OracleBudget {
    fn check(&self, required: u128) -> Result<(), OracleError> {
        if required > self.max_vectors {
            Err(OracleError::Budget {
                required,
                limit: self.max_vectors,
            })
        } else {
            Ok(())
        }
    }
}

/// Kappa from the 2x2 agreement table; `None` when both sequences are the
/// same constant.
pub fn kappa_from_counts(a: &[bool], b: &[bool]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as i64;
    let (mut n11, mut n10, mut n01, mut n00) = (0i64, 0i64, 0i64, 0i64);
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (true, true) => n11 += 1,
            (true, false) => n10 += 1,
            (false, true) => n01 += 1,
            (false, false) => n00 += 1,
        }
    }
    let expected = (n11 + n10) * (n11 + n01) + (n00 + n01) * (n00 + n10);
    let denominator = n * n - expected;
    if denominator == 0 {
        return None;
    }
    Some((n * (n11 + n00) - expected) as f64 / denominator as f64)
}

/// Mean over observers with a defined kappa; `None` if there are none.
pub fn mean_kappa(s: &[bool], rows: &[Vec<bool>]) -> Option<f64> {
    let defined: Vec<f64> = rows.iter().filter_map(|row| kappa_from_counts(s, row)).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn vector_from_mask(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedOptimum {
    pub kappa: f64,
    pub s: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceOptimum {
    /// Index `k`: best defined vector with exactly `k` correct responses.
    pub per_k: Vec<Option<EnumeratedOptimum>>,
    /// Best over all `k`; ties go to the larger `k`.
    pub best: Option<EnumeratedOptimum>,
}

/// Exhaustive search over all `2^N` response vectors of one condition.
pub fn brute_force_condition_optimum(
    matrix: &ConditionResponseMatrix,
    budget: &OracleBudget,
) -> Result<BruteForceOptimum, OracleError> {
    let n = matrix.correctness.first().map_or(0, Vec::len);
    if n >= 64 {
        return Err(OracleError::Budget {
            required: u128::MAX,
            limit: budget.max_vectors,
        });
    }
    budget.check(1u128 << n)?;
    let mut per_k: Vec<Option<EnumeratedOptimum>> = vec![None; n + 1];
    for mask in 0..(1u64 << n) {
        let s = vector_from_mask(mask, n);
        let Some(kappa) = mean_kappa(&s, &matrix.correctness) else {
            continue;
        };
        let slot = &mut per_k[mask.count_ones() as usize];
        if !matches!(slot, Some(b) if b.kappa >= kappa) {
            *slot = Some(EnumeratedOptimum { kappa, s });
        }
    }
    let mut best: Option<EnumeratedOptimum> = None;
    for entry in per_k.iter().flatten() {
        if !matches!(&best, Some(b) if b.kappa > entry.kappa) {
            best = Some(entry.clone());
        }
    }
    Ok(BruteForceOptimum { per_k, best })
}

/// O(n^2) dominance filter. Coordinates within `tolerance` count as equal;
/// duplicates keep their first occurrence. Output is sorted by accuracy.
pub fn prune_quadratic(points: &[ParetoPoint], tolerance: f64) -> Vec<ParetoPoint> {
    let close = |x: f64, y: f64| (x - y).abs() <= tolerance;
    let mut kept = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let mut dominated = false;
        for (j, o) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let no_worse = o.kappa >= p.kappa - tolerance && o.accuracy >= p.accuracy - tolerance;
            let better = o.kappa > p.kappa + tolerance || o.accuracy > p.accuracy + tolerance;
            let earlier_twin = j < i && close(o.kappa, p.kappa) && close(o.accuracy, p.accuracy);
            if (no_worse && better) || earlier_twin {
                dominated = true;
                break;
            }
        }
        if !dominated {
            kept.push(*p);
        }
    }
    kept.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy));
    kept
}

/// Frontier by joint enumeration of every condition's response vectors.
///
/// Each joint vector scores `sum_e 1/E sum_{c in e} 1/C_e * x_c` for both
/// kappa and accuracy; joint vectors with an undefined kappa in any
/// condition are skipped. An empty dataset yields the single point (0, 0).
pub fn brute_force_frontier(
    matrices: &ConditionSet,
    weights: &DatasetWeights,
    budget: &OracleBudget,
) -> Result<Vec<ParetoPoint>, OracleError> {
    let experiments: Vec<(&str, &[String])> = weights.experiments().collect();
    let mut blocks = Vec::new();
    for (_, conditions) in &experiments {
        for c in conditions.iter() {
            let m = matrices
                .get(c)
                .ok_or_else(|| OracleError::MissingCondition(c.clone()))?;
            let w = 1.0 / (experiments.len() as f64 * conditions.len() as f64);
            blocks.push((m, w));
        }
    }
    let total_bits: usize = blocks
        .iter()
        .map(|(m, _)| m.correctness.first().map_or(0, Vec::len))
        .sum();
    if total_bits >= 64 {
        return Err(OracleError::Budget {
            required: u128::MAX,
            limit: budget.max_vectors,
        });
    }
    budget.check(1u128 << total_bits)?;

    // (kappa or None, k) for each mask of each condition
    let tables: Vec<Vec<(Option<f64>, usize)>> = blocks
        .iter()
        .map(|(m, _)| {
            let n = m.correctness.first().map_or(0, Vec::len);
            (0..1u64 << n)
                .map(|mask| {
                    (
                        mean_kappa(&vector_from_mask(mask, n), &m.correctness),
                        mask.count_ones() as usize,
                    )
                })
                .collect()
        })
        .collect();

    // best kappa per tuple of per-condition k; accuracy depends only on it
    let mut best: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut masks = vec![0usize; blocks.len()];
    'joint: loop {
        let mut kappa = 0.0;
        let mut ks = Vec::with_capacity(blocks.len());
        let mut defined = true;
        for ((table, (_, w)), &mask) in tables.iter().zip(&blocks).zip(&masks) {
            let (value, k) = table[mask];
            match value {
                Some(v) => kappa += w * v,
                None => defined = false,
            }
            ks.push(k);
        }
        if defined {
            let entry = best.entry(ks).or_insert(f64::NEG_INFINITY);
            if kappa > *entry {
                *entry = kappa;
            }
        }
        // odometer increment
        for (i, mask) in masks.iter_mut().enumerate() {
            *mask += 1;
            if *mask < tables[i].len() {
                continue 'joint;
            }
            *mask = 0;
        }
        break;
    }
    if best.len() > budget.max_points {
        return Err(OracleError::Budget {
            required: best.len() as u128,
            limit: budget.max_points as u128,
        });
    }
    let points: Vec<ParetoPoint> = best
        .iter()
        .map(|(ks, &kappa)| {
            let accuracy = ks
                .iter()
                .zip(&blocks)
                .map(|(&k, (m, w))| w * k as f64 / m.correctness[0].len() as f64)
                .sum();
            ParetoPoint::new(kappa, accuracy)
        })
        .collect();
    Ok(prune_quadratic(&points, crate::pareto::POINT_TOLERANCE))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for the listed
/// coordinates.
pub fn partial_differences(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    coordinates: &[usize],
    step: f64,
) -> Result<Vec<f64>, OracleError> {
    let mut probe = x.to_vec();
    coordinates
        .iter()
        .map(|&i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            let d = (up - down) / (2.0 * step);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(OracleError::NonFinite { coordinate: i })
            }
        })
        .collect()
}

/// Central-difference gradient over every coordinate.
pub fn finite_difference(f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Result<Vec<f64>, OracleError> {
    let all: Vec<usize> = (0..x.len()).collect();
    partial_differences(f, x, &all, step)
}

/// Composite trapezoid rule with `intervals` equal panels.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    assert!(intervals > 0);
    let h = (b - a) / intervals as f64;
    let inner: f64 = (1..intervals).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}
