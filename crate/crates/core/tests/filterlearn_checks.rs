mod common;

use std::f64::consts::PI;

use hvalign::filterlearn::synthetic::{generate, SyntheticConfig, SyntheticTask};
use hvalign::filterlearn::{
    argmax, build_targets, evaluate_filter, forward_loss, gradient, train, FilterParams, LearnConfig, LearnError,
    LinearSoftmaxScorer, Scorer, ScorerTraining, TargetRefresh,
};
use hvalign::oracle::{mean_kappa, partial_differences};
use hvalign::{Image, Quadrant, SpectralFilter};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_scorer(
    rng: &mut rand_chacha::ChaCha8Rng,
    size: usize,
    channels: usize,
    pool: usize,
    classes: usize,
) -> LinearSoftmaxScorer {
    let mut s = LinearSoftmaxScorer::zeros(size, size, channels, pool, classes);
    s.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    s.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    s
}

fn random_image(rng: &mut rand_chacha::ChaCha8Rng, size: usize, channels: usize) -> Image {
    Image::from_fn(size, size, channels, |_, _, _| rng.random())
}

fn random_theta(rng: &mut rand_chacha::ChaCha8Rng, rows: usize) -> Quadrant {
    Quadrant::new(
        rows,
        rows,
        (0..rows * rows).map(|_| rng.random_range(0.5..1.5)).collect(),
    )
}

// Independent forward pipeline: mirror-padded blur of the quadrant, folding
// expansion, naive DFT, scorer, softmax cross-entropy, L1.
fn mirror(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

fn blur(values: &[f64], n: usize, gamma: f64) -> Vec<f64> {
    if gamma == 0.0 {
        return values.to_vec();
    }
    let r = (4.0 * gamma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|t| (-((t * t) as f64) / (2.0 * gamma * gamma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let taps: Vec<f64> = raw.iter().map(|t| t / total).collect();
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for (a, ka) in taps.iter().enumerate() {
                for (b, kb) in taps.iter().enumerate() {
                    let yy = mirror(y as i64 + a as i64 - r, n);
                    let xx = mirror(x as i64 + b as i64 - r, n);
                    acc += ka * kb * values[yy * n + xx];
                }
            }
            out[y * n + x] = acc;
        }
    }
    out
}

fn fold(i: usize, n: usize) -> usize {
    i.min(n - i).min(n / 2 - 1)
}

fn filter_plane(plane: &[f64], amplitudes: &[f64], n: usize) -> Vec<f64> {
    let w = 2.0 * PI / n as f64;
    let mut spectrum = vec![(0.0, 0.0); n * n];
    for u in 0..n {
        for v in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let phase = w * ((u * y + v * x) % n) as f64;
                    re += plane[y * n + x] * phase.cos();
                    im -= plane[y * n + x] * phase.sin();
                }
            }
            let a = amplitudes[u * n + v];
            spectrum[u * n + v] = (re * a, im * a);
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut re = 0.0;
            for u in 0..n {
                for v in 0..n {
                    let phase = w * ((u * y + v * x) % n) as f64;
                    let (a, b) = spectrum[u * n + v];
                    re += a * phase.cos() - b * phase.sin();
                }
            }
            out[y * n + x] = re / (n * n) as f64;
        }
    }
    out
}

fn scripted_loss(
    x: &Image,
    theta: &Quadrant,
    tau: f64,
    gamma: f64,
    lambda: f64,
    scorer: &dyn Scorer,
    target: usize,
) -> f64 {
    let n = x.width();
    let rows = theta.rows;
    let smooth = blur(&theta.values, rows, gamma);
    let amplitudes: Vec<f64> = (0..n * n)
        .map(|i| smooth[fold(i / n, n) * rows + fold(i % n, n)])
        .collect();
    let mut data = Vec::new();
    for c in 0..x.channels() {
        data.extend(filter_plane(x.plane(c), &amplitudes, n));
    }
    let scores = scorer.scores(&Image::from_data(n, n, x.channels(), data));
    let z: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + z.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    lse - z[target] + lambda * theta.values.iter().map(|t| t.abs()).sum::<f64>()
}

fn config(gamma: f64, lambda: f64) -> LearnConfig {
    LearnConfig {
        smooth_gamma: gamma,
        l1_weight: lambda,
        ..LearnConfig::default()
    }
}

#[test]
fn forward_loss_matches_scripted_pipeline() {
    let mut rng = common::rng(1);
    for (gamma, channels) in [(0.0, 1), (1.5, 3), (6.0, 3)] {
        let x = random_image(&mut rng, 16, channels);
        let scorer = random_scorer(&mut rng, 16, channels, 2, 5);
        let params = FilterParams {
            theta: random_theta(&mut rng, 8),
            temperature: 0.3,
        };
        let cfg = config(gamma, 5e-3);
        for target in 0..5 {
            let got = forward_loss(&x, &params, &cfg, &scorer, target).unwrap();
            let want = scripted_loss(&x, &params.theta, 0.3, gamma, 5e-3, &scorer, target);
            assert!(
                (got.total - want).abs() < 1e-10,
                "gamma {gamma}, target {target}: {} vs {want}",
                got.total
            );
            assert!((got.cross_entropy + got.l1 - got.total).abs() < 1e-15);
        }
    }
}

#[test]
fn identity_filter_and_confident_scorer_give_zero_loss() {
    let x = Image::from_fn(16, 16, 1, |_, y, _| if y < 8 { 0.9 } else { 0.1 });
    let mut scorer = LinearSoftmaxScorer::zeros(16, 16, 1, 16, 3);
    scorer.weights = vec![200.0, -200.0, -200.0];
    let params = FilterParams {
        theta: Quadrant::filled(8, 8, 1.0),
        temperature: 0.07,
    };
    let loss = forward_loss(&x, &params, &config(6.0, 0.0), &scorer, 0).unwrap();
    assert!(loss.total < 1e-12, "{}", loss.total);
    assert_eq!(loss.l1, 0.0);
}

#[test]
fn l1_of_ones_is_exact() {
    let mut rng = common::rng(2);
    let x = random_image(&mut rng, 224, 1);
    let scorer = random_scorer(&mut rng, 224, 1, 28, 3);
    let params = FilterParams {
        theta: Quadrant::filled(112, 112, 1.0),
        temperature: 1.0,
    };
    let lambda = 5e-5;
    let with = forward_loss(&x, &params, &config(6.0, lambda), &scorer, 1).unwrap();
    let without = forward_loss(&x, &params, &config(6.0, 0.0), &scorer, 1).unwrap();
    assert_eq!(with.l1, lambda * (112.0 * 112.0));
    assert_eq!(with.cross_entropy, without.cross_entropy);
}

fn check_gradient(gamma: f64, size: usize, channels: usize, seed: u64) {
    let mut rng = common::rng(seed);
    let x = random_image(&mut rng, size, channels);
    let scorer = random_scorer(&mut rng, size, channels, 2, 4);
    let rows = size / 2;
    let params = FilterParams {
        theta: random_theta(&mut rng, rows),
        temperature: 0.4,
    };
    let cfg = config(gamma, 1e-3);
    let target = rng.random_range(0..4);
    let analytic = gradient(&x, &params, &cfg, &scorer, target).unwrap();

    let coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..rows * rows)).collect();
    let loss_at = |theta: &[f64]| {
        let p = FilterParams {
            theta: Quadrant::new(rows, rows, theta.to_vec()),
            temperature: 0.4,
        };
        forward_loss(&x, &p, &cfg, &scorer, target).unwrap().total
    };
    let numeric = partial_differences(loss_at, &params.theta.values, &coords, 1e-4).unwrap();
    for (&i, fd) in coords.iter().zip(&numeric) {
        let err = common::relative_error(analytic.theta[i], *fd);
        assert!(err < 1e-4, "theta[{i}]: {} vs {fd} ({err})", analytic.theta[i]);
    }

    let tau_loss = |t: &[f64]| {
        let p = FilterParams {
            theta: params.theta.clone(),
            temperature: t[0],
        };
        forward_loss(&x, &p, &cfg, &scorer, target).unwrap().total
    };
    let fd_tau = partial_differences(tau_loss, &[0.4], &[0], 1e-4).unwrap()[0];
    assert!(common::relative_error(analytic.temperature, fd_tau) < 1e-4);
}

#[test]
fn gradient_matches_finite_differences() {
    check_gradient(0.0, 16, 1, 3);
    check_gradient(1.5, 16, 3, 4);
    check_gradient(6.0, 32, 3, 5);
}

#[test]
fn l1_gradient_is_sign() {
    let mut rng = common::rng(6);
    let x = random_image(&mut rng, 16, 1);
    let scorer = random_scorer(&mut rng, 16, 1, 4, 3);
    let mut theta = Quadrant::new(8, 8, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect());
    theta.values[5] = 0.0;
    let params = FilterParams {
        theta,
        temperature: 1.0,
    };
    let lambda = 0.25;
    let with = gradient(&x, &params, &config(1.0, lambda), &scorer, 2).unwrap();
    let without = gradient(&x, &params, &config(1.0, 0.0), &scorer, 2).unwrap();
    for (i, t) in params.theta.values.iter().enumerate() {
        let want = if *t == 0.0 { 0.0 } else { lambda * t.signum() };
        assert!((with.theta[i] - without.theta[i] - want).abs() < 1e-12);
    }
    assert_eq!(with.temperature, without.temperature);
}

#[test]
fn saturated_softmax_has_no_temperature_gradient() {
    let x = Image::from_fn(16, 16, 1, |_, _, _| 0.5);
    let mut scorer = LinearSoftmaxScorer::zeros(16, 16, 1, 16, 3);
    scorer.bias = vec![1e4, 0.0, 0.0];
    let params = FilterParams {
        theta: Quadrant::filled(8, 8, 1.0),
        temperature: 1.0,
    };
    let g = gradient(&x, &params, &config(0.0, 0.0), &scorer, 0).unwrap();
    assert_eq!(g.temperature, 0.0);
}

#[test]
fn targets_follow_ideal_responses() {
    let logits = vec![vec![0.1, 0.9, 0.3], vec![2.0, 1.0, 1.5], vec![0.0, 0.5, 0.5]];
    let targets = build_targets(&[true, false, false], &logits, &[2, 0, 0]).unwrap();
    // forced true class; second best when truth is the argmax; ties go low
    assert_eq!(targets, vec![2, 2, 1]);
    // "dog" favoured among wrong classes
    assert_eq!(build_targets(&[false], &[vec![0.0, 3.0, 1.0]], &[0]).unwrap(), vec![1]);
    assert!(matches!(
        build_targets(&[false], &[vec![1.0]], &[0]),
        Err(LearnError::ImpossibleTarget { stimulus: 0 })
    ));
}

fn small_task() -> (SyntheticTask, LinearSoftmaxScorer) {
    let cfg = SyntheticConfig {
        size: 16,
        low_radius: (1.0, 3.0),
        cue_radius: 6.0,
        stimuli_per_condition: 16,
        scorer_images: 80,
        ..SyntheticConfig::default()
    };
    let task = generate(&cfg).unwrap();
    let scorer = task.fit_scorer(ScorerTraining::default()).unwrap();
    (task, scorer)
}

fn short_config(epochs: usize) -> LearnConfig {
    LearnConfig {
        smooth_gamma: 1.0,
        initial_temperature: 1.0,
        learning_rate: 0.02,
        epochs,
        batch_size: 8,
        ..LearnConfig::default()
    }
}

// Hand evaluation: classify raw images, then one experiment's mean of
// per-condition mean kappas.
fn scripted_baseline(task: &SyntheticTask, scorer: &LinearSoftmaxScorer) -> f64 {
    let set = task.learning_set().unwrap();
    let mut kappas = Vec::new();
    for m in set.humans.values() {
        let row: Vec<bool> = m
            .stimulus_ids
            .iter()
            .zip(&m.true_classes)
            .map(|(id, truth)| task.classes[argmax(&scorer.scores(&task.images[id]))] == *truth)
            .collect();
        if let Some(k) = mean_kappa(&row, &m.correctness) {
            kappas.push(k);
        }
    }
    kappas.iter().sum::<f64>() / kappas.len() as f64
}

#[test]
fn identity_evaluation_matches_hand_script() {
    let (task, scorer) = small_task();
    let set = task.learning_set().unwrap();
    let report = evaluate_filter(&SpectralFilter::identity(16, 16), &set, &scorer).unwrap();
    assert!((report.error_consistency - scripted_baseline(&task, &scorer)).abs() < 1e-12);
}

#[test]
fn zero_epochs_returns_initial_filter() {
    let (task, scorer) = small_task();
    let set = task.learning_set().unwrap();
    let out = train(&set, &short_config(0), &scorer).unwrap();
    assert_eq!((out.trace.len(), out.best_epoch), (1, 0));
    assert!(out.filter.amplitudes.iter().all(|a| (a - 1.0).abs() < 0.05));
    let baseline = scripted_baseline(&task, &scorer);
    assert!((out.trace[0].error_consistency.unwrap() - baseline).abs() < 1e-12);
}

#[test]
fn training_is_reproducible_and_symmetric() {
    let (task, scorer) = small_task();
    let set = task.learning_set().unwrap();
    let cfg = LearnConfig {
        snapshot_every: Some(2),
        ..short_config(4)
    };
    let a = train(&set, &cfg, &scorer).unwrap();
    let b = train(&set, &cfg, &scorer).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 2, 4]);
    assert!(a.trace.iter().all(|r| r.symmetry_residue == 0.0));
    assert!(a.best_record().loss <= a.trace[0].loss + 1e-12);

    let c = train(&set, &LearnConfig { seed: 1, ..cfg.clone() }, &scorer).unwrap();
    assert_ne!(a.theta, c.theta);

    let per_step = LearnConfig {
        refresh: TargetRefresh::PerStep,
        ..cfg
    };
    let d = train(&set, &per_step, &scorer).unwrap();
    let e = train(&set, &per_step, &scorer).unwrap();
    assert_eq!(d.trace, e.trace);
}

#[test]
fn strong_l1_shrinks_every_step() {
    let (task, scorer) = small_task();
    let set = task.learning_set().unwrap();
    let cfg = LearnConfig {
        l1_weight: 10.0,
        learning_rate: 0.01,
        batch_size: 0,
        learn_temperature: false,
        ..short_config(15)
    };
    let out = train(&set, &cfg, &scorer).unwrap();
    for w in out.trace.windows(2) {
        assert!(w[1].l1 < w[0].l1, "{} -> {}", w[0].l1, w[1].l1);
    }
}

#[test]
fn runaway_loss_aborts_with_trace() {
    let (task, _) = small_task();
    let set = task.learning_set().unwrap();
    let mut scorer = LinearSoftmaxScorer::zeros(16, 16, 1, 16, 4);
    scorer.bias = vec![0.0, 0.0, 0.0, 1e9];
    match train(&set, &short_config(3), &scorer) {
        Err(LearnError::Diverged { epoch, loss, trace }) => {
            assert_eq!(epoch, 0);
            assert!(loss > 1e6);
            assert_eq!(trace.len(), 1);
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.best_epoch)),
    }
}

#[test]
fn scorer_gradient_matches_finite_differences() {
    let mut rng = common::rng(9);
    let scorer = random_scorer(&mut rng, 8, 3, 2, 4);
    let img = random_image(&mut rng, 8, 3);
    let g_scores: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
    let analytic = scorer.input_gradient(&img, &g_scores);
    let f = |x: &[f64]| {
        let s = scorer.scores(&Image::from_data(8, 8, 3, x.to_vec()));
        s.iter().zip(&g_scores).map(|(a, b)| a * b).sum::<f64>()
    };
    let coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..img.data().len())).collect();
    let numeric = partial_differences(f, img.data(), &coords, 1e-4).unwrap();
    for (&i, fd) in coords.iter().zip(&numeric) {
        assert!(common::relative_error(analytic[i], *fd) < 1e-4);
    }
}
