use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use hvalign::filterlearn::synthetic::{self, generate, SyntheticConfig, SyntheticTask};
use hvalign::filterlearn::{
    amplitude_mass_below, evaluate_filter, forward_loss, gradient, train, EpochRecord, FilterParams, ScorerTraining,
};
use hvalign::ingest::{load_trials, save_trials};
use hvalign::oracle::partial_differences;
use hvalign::{Image, LearnConfig, LearnError, LearningSet, LinearSoftmaxScorer, Quadrant, SpectralFilter};
use serde::Serialize;
use serde_json::json;

use super::{csv_artifact, vocabulary};
use crate::error::{usage, verification};
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug, Clone, Serialize)]
pub struct LearnArgs {
    /// Train on the built-in synthetic low-frequency task
    #[arg(long, conflicts_with_all = ["humans", "images", "scorer"])]
    pub synthetic: bool,

    /// Seed of the synthetic task
    #[arg(long, default_value_t = SyntheticConfig::default().seed)]
    pub task_seed: u64,

    /// Human trial CSV
    #[arg(long, requires_all = ["images", "scorer"])]
    pub humans: Option<PathBuf>,

    /// Directory with one `<stimulus_id>.png` per stimulus
    #[arg(long)]
    pub images: Option<PathBuf>,

    /// Scorer weights (JSON, as written by `synth-task`)
    #[arg(long)]
    pub scorer: Option<PathBuf>,

    /// Class names in scorer order, comma separated (default: the first
    /// benchmark classes)
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,

    /// Training configuration (JSON); flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub learning_rate: Option<f64>,

    #[arg(long)]
    pub l1_weight: Option<f64>,

    /// Blur of the raw quadrant before expansion
    #[arg(long)]
    pub gamma: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Save the raw quadrant every this many epochs
    #[arg(long)]
    pub snapshot_every: Option<usize>,

    /// Radius (cycles per image) for the reported amplitude mass
    #[arg(long, default_value_t = 20.0)]
    pub mass_radius: f64,

    #[command(flatten)]
    pub common: Common,
}

impl LearnArgs {
    fn learn_config(&self) -> Result<LearnConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
            None if self.synthetic => synthetic::learn_config(0),
            None => LearnConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.l1_weight {
            cfg.l1_weight = v;
        }
        if let Some(v) = self.gamma {
            cfg.smooth_gamma = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if self.snapshot_every.is_some() {
            cfg.snapshot_every = self.snapshot_every;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn data(&self, run: &mut Run) -> Result<(LearningSet, LinearSoftmaxScorer)> {
        if self.synthetic {
            let task = generate(&SyntheticConfig {
                seed: self.task_seed,
                ..SyntheticConfig::default()
            })?;
            let scorer = task.fit_scorer(ScorerTraining::default())?;
            return Ok((task.learning_set()?, scorer));
        }
        let (Some(humans), Some(dir), Some(scorer_path)) = (&self.humans, &self.images, &self.scorer) else {
            return Err(usage("give either --synthetic or --humans, --images and --scorer"));
        };
        run.input(scorer_path);
        let scorer = LinearSoftmaxScorer::load(scorer_path)?;
        let classes: Vec<String> = if self.classes.is_empty() {
            vocabulary(&[]).classes()[..scorer.classes].to_vec()
        } else {
            self.classes.clone()
        };
        if classes.len() != scorer.classes {
            return Err(usage(format!(
                "{} class names for a {}-class scorer",
                classes.len(),
                scorer.classes
            )));
        }
        run.input(humans);
        let trials = load_trials(humans, &vocabulary(&classes))?;
        let mut images = BTreeMap::new();
        for stimulus in trials.iter().map(|t| &t.stimulus_id) {
            if images.contains_key(stimulus) {
                continue;
            }
            let path = dir.join(format!("{stimulus}.png"));
            run.input(&path);
            images.insert(stimulus.clone(), Image::load(&path)?);
        }
        Ok((LearningSet::from_trials(&trials, &images, &classes)?, scorer))
    }
}

fn write_trace(run: &mut Run, trace: &[EpochRecord]) -> Result<()> {
    let mut csv = csv_artifact(run, "trace.csv")?;
    for record in trace {
        csv.serialize(record)?;
    }
    csv.flush()?;
    Ok(())
}

fn write_quadrant(run: &mut Run, name: impl Into<PathBuf>, q: &Quadrant) -> Result<()> {
    let path = run.artifact(name.into());
    Ok(q.save(path)?)
}

pub fn run(args: &LearnArgs) -> Result<()> {
    let cfg = args.learn_config()?;
    let mut run = Run::start(
        &args.common.out,
        "learn-filter",
        &json!({ "args": args, "resolved": cfg }),
        args.common.threads as usize,
    )?;
    let (set, scorer) = args.data(&mut run)?;

    if args.common.verify {
        run.verification = Some(verify_gradient(&set, &cfg, &scorer)?);
    }

    let outcome = match train(&set, &cfg, &scorer) {
        Ok(o) => o,
        Err(LearnError::Diverged { epoch, loss, trace }) => {
            write_trace(&mut run, &trace)?;
            run.finish()?;
            return Err(LearnError::Diverged { epoch, loss, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };

    write_quadrant(&mut run, "filter.csv", &outcome.smoothed)?;
    write_quadrant(&mut run, "theta.csv", &outcome.theta)?;
    for (epoch, q) in &outcome.snapshots {
        fs::create_dir_all(args.common.out.join("snapshots"))?;
        write_quadrant(
            &mut run,
            PathBuf::from("snapshots").join(format!("epoch-{epoch:04}.csv")),
            q,
        )?;
    }
    write_trace(&mut run, &outcome.trace)?;

    let first = &set.images[0];
    let identity = SpectralFilter::identity(first.height(), first.width());
    let report = json!({
        "learned": evaluate_filter(&outcome.filter, &set, &scorer)?,
        "identity": evaluate_filter(&identity, &set, &scorer)?,
    });
    run.write_json("report.json", &report)?;
    let mass = amplitude_mass_below(&outcome.filter, args.mass_radius);
    let best = outcome.best_record();
    run.write_json(
        "summary.json",
        &json!({
            "best_epoch": outcome.best_epoch,
            "error_consistency": best.error_consistency,
            "accuracy": best.accuracy,
            "temperature": outcome.temperature,
            "mass_radius": args.mass_radius,
            "amplitude_mass_below": mass,
        }),
    )?;
    run.finish()?;

    let ec = |r: &EpochRecord| r.error_consistency.map_or("n/a".to_owned(), |v| format!("{v:.4}"));
    println!("best epoch         {} of {}", outcome.best_epoch, cfg.epochs);
    println!("error consistency  {} -> {}", ec(&outcome.trace[0]), ec(best));
    println!("mass below r={}    {mass:.4}", args.mass_radius);
    Ok(())
}

/// Central differences of the loss on one stimulus, at a fixed near-identity
/// filter, against the analytic gradient.
fn verify_gradient(set: &LearningSet, cfg: &LearnConfig, scorer: &LinearSoftmaxScorer) -> Result<serde_json::Value> {
    const STEP: f64 = 1e-4;
    const TOL: f64 = 1e-4;
    const COORDINATES: usize = 12;
    let first = &set.images[0];
    let (rows, cols) = (first.height() / 2, first.width() / 2);
    let n = rows * cols;
    let theta: Vec<f64> = (0..n).map(|i| 1.0 + 0.25 * (i as f64 * 0.7).sin()).collect();
    let params = FilterParams {
        theta: Quadrant::new(rows, cols, theta),
        temperature: cfg.initial_temperature,
    };
    let (x, target) = (first, set.true_classes[0]);
    let analytic = gradient(x, &params, cfg, scorer, target)?;
    let coords: Vec<usize> = (0..COORDINATES).map(|i| i * (n - 1) / (COORDINATES - 1)).collect();
    let loss = |values: &[f64]| {
        let p = FilterParams {
            theta: Quadrant::new(rows, cols, values.to_vec()),
            temperature: params.temperature,
        };
        forward_loss(x, &p, cfg, scorer, target).map_or(f64::NAN, |l| l.total)
    };
    let numeric = partial_differences(loss, &params.theta.values, &coords, STEP)?;
    let mut worst: f64 = 0.0;
    for (&i, fd) in coords.iter().zip(&numeric) {
        let a = analytic.theta[i];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    if !(worst < TOL) {
        return Err(verification(format!(
            "gradient relative error {worst:e} at step {STEP}"
        )));
    }
    Ok(json!({
        "reference": "central finite differences",
        "coordinates": coords,
        "max_relative_error": worst,
        "tolerance": TOL,
        "passed": true,
    }))
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    /// Task configuration (JSON); `--seed` overrides its seed
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub common: Common,
}

/// Writes trials, stimulus images and a fitted scorer, in the layout
/// `learn-filter` reads.
pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut run = Run::start(
        &args.common.out,
        "synth-task",
        &json!({ "args": args, "resolved": cfg }),
        args.common.threads as usize,
    )?;
    let task: SyntheticTask = generate(&cfg)?;
    let scorer = task.fit_scorer(ScorerTraining::default())?;

    save_trials(run.artifact("trials.csv"), &task.trials)?;
    scorer.save(run.artifact("scorer.json"))?;
    fs::create_dir_all(args.common.out.join("images"))?;
    for (stimulus, img) in &task.images {
        img.save(run.artifact(PathBuf::from("images").join(format!("{stimulus}.png"))))?;
    }
    let mut signal = csv_artifact(&mut run, "signal.csv")?;
    signal.write_record(["stimulus_id", "strength"])?;
    for (stimulus, s) in &task.signal {
        signal.write_record([stimulus.clone(), s.to_string()])?;
    }
    signal.flush()?;
    run.write_json("classes.json", &task.classes)?;
    run.finish()?;
    println!(
        "{} trials, {} stimuli, {} classes in {}",
        task.trials.len(),
        task.images.len(),
        task.classes.len(),
        args.common.out.display()
    );
    Ok(())
}
