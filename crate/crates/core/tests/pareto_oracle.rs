mod common;

use std::collections::BTreeMap;

use hvalign::metrics::KAPPA_TOLERANCE;
use hvalign::oracle::{brute_force_condition_optimum, brute_force_frontier, mean_kappa, prune_quadratic};
use hvalign::pareto::{
    best_of_sweep, condition_sweep, dataset_frontier, frontier_expand, linear_weights, optimal_for_k, prune_dominated,
    ConditionCandidates, DEFAULT_POINT_CAP, POINT_TOLERANCE,
};
use hvalign::{
    ConditionResponseMatrix, ConditionSet, DatasetWeights, OracleBudget, ParetoError, ParetoPoint, UndefinedPolicy,
};
use rand::seq::SliceRandom;
use rand::Rng;

fn assert_same_points(got: &[ParetoPoint], want: &[ParetoPoint]) {
    assert_eq!(got.len(), want.len(), "got {got:?}\nwant {want:?}");
    for (g, w) in got.iter().zip(want) {
        assert!(
            (g.kappa - w.kappa).abs() <= 1e-12 && (g.accuracy - w.accuracy).abs() <= 1e-12,
            "{g:?} vs {w:?}"
        );
    }
}

#[test]
fn per_k_optimum_matches_enumeration() {
    let mut rng = common::rng(1);
    for _ in 0..30 {
        let m = common::random_matrix(&mut rng, "e", "c", 3, 8);
        let oracle = brute_force_condition_optimum(&m, &OracleBudget::default()).unwrap();
        for (o, enumerated) in condition_sweep(&m).iter().zip(&oracle.per_k) {
            assert_eq!(o.s.iter().filter(|&&x| x).count(), o.k);
            match (o.kappa_mean, enumerated) {
                (Some(k), Some(e)) => assert!((k - e.kappa).abs() < 1e-12, "k = {}: {k} vs {}", o.k, e.kappa),
                (None, None) => {}
                other => panic!("definedness differs at k = {}: {other:?}", o.k),
            }
        }
    }
}

#[test]
fn global_optimum_matches_enumeration() {
    let mut rng = common::rng(2);
    for (observers, stimuli) in [(4, 12), (3, 10), (1, 6), (2, 14)] {
        for _ in 0..5 {
            let m = common::random_matrix(&mut rng, "e", "c", observers, stimuli);
            let sweep = condition_sweep(&m);
            let best = best_of_sweep(&sweep).unwrap();
            let oracle = brute_force_condition_optimum(&m, &OracleBudget::default())
                .unwrap()
                .best
                .unwrap();
            assert!((best.kappa_mean.unwrap() - oracle.kappa).abs() < 1e-12);
            // the certificate achieves the reported value
            assert!((mean_kappa(&best.s, &m.correctness).unwrap() - oracle.kappa).abs() < 1e-12);
        }
    }
}

#[test]
fn objective_is_linear_at_fixed_k() {
    let mut rng = common::rng(3);
    for _ in 0..20 {
        let m = common::random_matrix(&mut rng, "e", "c", 3, 12);
        let (n, len) = (m.n_observers() as f64, m.n_stimuli());
        for k in 1..len {
            let w = linear_weights(&m, k);
            if w.skipped_observers > 0 {
                continue;
            }
            let mut s = vec![false; len];
            s[..k].iter_mut().for_each(|x| *x = true);
            for _ in 0..5 {
                s.shuffle(&mut rng);
                let score: f64 = s.iter().zip(&w.weights).filter(|(x, _)| **x).map(|(_, w)| w).sum();
                let kappa = mean_kappa(&s, &m.correctness).unwrap();
                assert!((kappa - 2.0 * score / (len as f64 * n)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identical_observers_are_copied() {
    let row = common::bits("1101001110");
    let m = ConditionResponseMatrix::from_rows("e", "c", vec![row.clone(), row.clone()]);
    let sweep = condition_sweep(&m);
    let best = best_of_sweep(&sweep).unwrap();
    assert_eq!(best.s, row);
    assert_eq!(best.kappa_mean, Some(1.0));
    let oracle = brute_force_condition_optimum(&m, &OracleBudget::default()).unwrap();
    assert_eq!(oracle.best.unwrap().kappa, 1.0);
}

#[test]
fn perfect_observer_sweep_is_degenerate_at_full_accuracy() {
    let m = ConditionResponseMatrix::from_rows("e", "c", vec![vec![true; 5]]);
    let sweep = condition_sweep(&m);
    assert_eq!(sweep[5].kappa_mean, None);
    assert!(sweep[..5].iter().all(|o| o.kappa_mean == Some(0.0)));
    assert_eq!(optimal_for_k(&m, 5).s, vec![true; 5]);
}

#[test]
fn prune_examples() {
    let p = ParetoPoint::new;
    assert_eq!(prune_dominated(&[p(0.5, 0.5), p(0.4, 0.4)]), vec![p(0.5, 0.5)]);
    assert_eq!(
        prune_dominated(&[p(0.5, 0.5), p(0.4, 0.6)]),
        vec![p(0.5, 0.5), p(0.4, 0.6)]
    );
    assert_eq!(prune_dominated(&[p(0.5, 0.5), p(0.5, 0.5)]), vec![p(0.5, 0.5)]);
    assert!(prune_dominated(&[]).is_empty());
}

#[test]
fn prune_matches_quadratic_scan() {
    let mut rng = common::rng(4);
    for round in 0..20 {
        // coarse grids produce ties in one or both coordinates
        let levels = if round % 2 == 0 { 20.0 } else { 1e9 };
        let points: Vec<ParetoPoint> = (0..1000)
            .map(|_| {
                let k: f64 = rng.random_range(-1.0..1.0);
                let a: f64 = rng.random();
                ParetoPoint::new((k * levels).round() / levels, (a * levels).round() / levels)
            })
            .collect();
        let fast = prune_dominated(&points);
        assert_same_points(&fast, &prune_quadratic(&points, POINT_TOLERANCE));
        assert_eq!(prune_dominated(&fast), fast);
    }
}

fn two_condition_dataset(rng: &mut rand_chacha::ChaCha8Rng, same_experiment: bool) -> ConditionSet {
    let mut set = BTreeMap::new();
    for c in ["a", "b"] {
        let experiment = if same_experiment { "e" } else { c };
        let observers = rng.random_range(1..=3);
        let stimuli = rng.random_range(2..=8);
        set.insert(
            c.to_owned(),
            common::random_matrix(rng, experiment, c, observers, stimuli),
        );
    }
    set
}

#[test]
fn frontier_matches_joint_enumeration() {
    let mut rng = common::rng(6);
    for round in 0..20 {
        let set = two_condition_dataset(&mut rng, round % 2 == 0);
        let weights = DatasetWeights::from_conditions(&set);
        let frontier = dataset_frontier(&set, &weights, UndefinedPolicy::Drop, DEFAULT_POINT_CAP).unwrap();
        let oracle = brute_force_frontier(&set, &weights, &OracleBudget::default()).unwrap();
        assert_same_points(&frontier.points, &oracle);
    }
}

#[test]
fn three_conditions_two_experiments() {
    let mut rng = common::rng(7);
    let mut set = BTreeMap::new();
    for (e, c) in [("x", "x1"), ("x", "x2"), ("y", "y1")] {
        set.insert(c.to_owned(), common::random_matrix(&mut rng, e, c, 2, 5));
    }
    let weights = DatasetWeights::from_conditions(&set);
    let frontier = dataset_frontier(&set, &weights, UndefinedPolicy::Drop, DEFAULT_POINT_CAP).unwrap();
    let oracle = brute_force_frontier(&set, &weights, &OracleBudget::default()).unwrap();
    assert_same_points(&frontier.points, &oracle);
}

#[test]
fn single_condition_frontier_is_pruned_sweep() {
    let mut rng = common::rng(8);
    let m = common::random_matrix(&mut rng, "e", "c", 3, 9);
    let sweep = condition_sweep(&m);
    let candidates = ConditionCandidates::from_sweep("c", 1.0, &sweep);
    let frontier = frontier_expand(std::slice::from_ref(&candidates), DEFAULT_POINT_CAP).unwrap();
    let points: Vec<ParetoPoint> = candidates
        .options
        .iter()
        .map(|o| ParetoPoint::new(o.kappa, o.accuracy))
        .collect();
    assert_same_points(&frontier.points, &prune_dominated(&points));

    let mut set = BTreeMap::new();
    set.insert("c".to_owned(), m);
    let oracle = brute_force_frontier(&set, &DatasetWeights::from_conditions(&set), &OracleBudget::default()).unwrap();
    assert_same_points(&frontier.points, &oracle);
}

#[test]
fn frontier_order_invariant_and_certified() {
    let mut rng = common::rng(9);
    let mut candidates = Vec::new();
    for c in 0..5 {
        let m = common::random_matrix(&mut rng, "e", &format!("c{c}"), 3, 10);
        candidates.push(ConditionCandidates::from_sweep(
            &m.condition_id,
            0.2,
            &condition_sweep(&m),
        ));
    }
    let forward = frontier_expand(&candidates, DEFAULT_POINT_CAP).unwrap();
    candidates.reverse();
    let backward = frontier_expand(&candidates, DEFAULT_POINT_CAP).unwrap();
    assert_same_points(&forward.points, &backward.points);
    assert_same_points(&prune_dominated(&forward.points), &forward.points);

    for (i, point) in forward.points.iter().enumerate() {
        let choices = forward.certificate(i);
        let kappa: f64 = choices.iter().map(|c| 0.2 * c.kappa).sum();
        let accuracy: f64 = choices.iter().map(|c| 0.2 * c.accuracy).sum();
        assert!((kappa - point.kappa).abs() < 1e-12 && (accuracy - point.accuracy).abs() < 1e-12);
    }
    for w in forward.points.windows(2) {
        assert!(w[1].accuracy > w[0].accuracy && w[1].kappa < w[0].kappa);
    }
}

#[test]
fn frontier_ends_at_zero_consistency() {
    let mut rng = common::rng(10);
    let mut set = BTreeMap::new();
    for c in ["a", "b", "c"] {
        let mut m = common::random_matrix(&mut rng, "e", c, 3, 12);
        // keep every observer imperfect
        m.correctness.iter_mut().for_each(|row| row[0] = false);
        set.insert(c.to_owned(), m);
    }
    let weights = DatasetWeights::from_conditions(&set);
    let frontier = dataset_frontier(&set, &weights, UndefinedPolicy::Drop, DEFAULT_POINT_CAP).unwrap();
    let last = frontier.points.last().unwrap();
    assert!((last.accuracy - 1.0).abs() < 1e-12);
    assert!(last.kappa.abs() < KAPPA_TOLERANCE);
}

#[test]
fn capacity_and_budget_are_enforced() {
    let mut rng = common::rng(12);
    let candidates: Vec<ConditionCandidates> = (0..3)
        .map(|c| {
            let m = common::random_matrix(&mut rng, "e", &format!("c{c}"), 2, 30);
            ConditionCandidates::from_sweep(&m.condition_id, 1.0 / 3.0, &condition_sweep(&m))
        })
        .collect();
    assert!(matches!(
        frontier_expand(&candidates, 10),
        Err(ParetoError::Capacity { cap: 10, .. })
    ));

    let m = common::random_matrix(&mut rng, "e", "c", 2, 21);
    assert!(brute_force_condition_optimum(&m, &OracleBudget::default()).is_err());
}

#[test]
fn empty_dataset_frontier_is_origin() {
    let empty = ConditionSet::new();
    let weights = DatasetWeights::from_conditions(&empty);
    let oracle = brute_force_frontier(&empty, &weights, &OracleBudget::default()).unwrap();
    assert_eq!(oracle, vec![ParetoPoint::new(0.0, 0.0)]);
    let frontier = dataset_frontier(&empty, &weights, UndefinedPolicy::Drop, DEFAULT_POINT_CAP).unwrap();
    assert_eq!(frontier.points, oracle);
}
