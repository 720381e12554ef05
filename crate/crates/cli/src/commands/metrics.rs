use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use hvalign::ingest::build_matrices;
use hvalign::metrics::{align_model, alignment_report, Aggregation, ReportOptions};
use hvalign::oracle::kappa_from_counts;
use hvalign::{AlignmentReport, ConditionSet, DatasetWeights, UndefinedPolicy};
use serde::Serialize;
use serde_json::json;

use super::{csv_artifact, load_split, vocabulary, HumanData};
use crate::error::verification;
use crate::manifest::Run;
use crate::Common;

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    Hierarchical,
    Flat,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub data: HumanData,

    /// Model trial CSV (one observer)
    #[arg(long)]
    pub model: PathBuf,

    /// How condition accuracies are averaged into the OOD accuracy
    #[arg(long, value_enum, default_value_t = AccuracyMode::Hierarchical)]
    pub accuracy: AccuracyMode,

    #[command(flatten)]
    pub common: Common,
}

pub fn run(args: &MetricsArgs) -> Result<()> {
    let mut run = Run::start(&args.common.out, "metrics", args, args.common.threads as usize)?;
    let humans = args.data.load(&mut run)?;
    let (model_trials, model_cue_conflict) = load_split(&args.model, &vocabulary(&args.data.classes), &mut run)?;
    let model = build_matrices(&model_trials).context("building model response matrices")?;
    let rows = align_model(&humans.matrices, &model)?;
    let options = ReportOptions {
        undefined: args.data.undefined.into(),
        accuracy_aggregation: match args.accuracy {
            AccuracyMode::Hierarchical => Aggregation::Hierarchical,
            AccuracyMode::Flat => Aggregation::Flat,
        },
    };
    let report = alignment_report(&humans.matrices, &humans.weights, &rows, &model_cue_conflict, options)?;

    if args.common.verify {
        run.verification = Some(verify(
            &report,
            &humans.matrices,
            &humans.weights,
            &rows,
            options.undefined,
        )?);
    }

    run.write_json("report.json", &report)?;
    let mut csv = csv_artifact(&mut run, "per_condition.csv")?;
    csv.write_record([
        "condition_id",
        "experiment_id",
        "observers",
        "stimuli",
        "human_accuracy",
        "model_accuracy",
        "kappa",
        "dropped_pairs",
    ])?;
    for (condition, r) in &report.per_condition {
        let m = &humans.matrices[condition];
        csv.write_record([
            condition.clone(),
            m.experiment_id.clone(),
            m.n_observers().to_string(),
            m.n_stimuli().to_string(),
            m.mean_accuracy().to_string(),
            r.accuracy.to_string(),
            r.kappa.map(|k| k.to_string()).unwrap_or_default(),
            r.dropped_pairs.to_string(),
        ])?;
    }
    csv.flush()?;
    run.finish()?;

    println!("error consistency  {:.4}", report.error_consistency);
    match report.shape_bias {
        Some(sb) => println!("shape bias         {sb:.4}"),
        None => println!("shape bias         n/a (no cue-conflict trials)"),
    }
    println!("OOD accuracy       {:.4}", report.ood_accuracy);
    if !humans.removed.is_empty() {
        println!("excluded           {}", humans.removed.join(", "));
    }
    Ok(())
}

/// Recomputes the per-condition and overall consistency from 2x2 counts.
fn verify(
    report: &AlignmentReport,
    humans: &ConditionSet,
    weights: &DatasetWeights,
    rows: &BTreeMap<String, Vec<bool>>,
    policy: UndefinedPolicy,
) -> Result<serde_json::Value> {
    const TOL: f64 = 1e-12;
    let mut worst: f64 = 0.0;
    let mut per_experiment: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for condition in weights.conditions() {
        let model = &rows[condition];
        let kappas: Vec<Option<f64>> = humans[condition]
            .correctness
            .iter()
            .map(|h| kappa_from_counts(model, h))
            .collect();
        let defined: Vec<f64> = match policy {
            UndefinedPolicy::Drop => kappas.iter().flatten().copied().collect(),
            UndefinedPolicy::ImputeZero => kappas.iter().map(|k| k.unwrap_or(0.0)).collect(),
        };
        let expected = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let got = report.per_condition[condition].kappa;
        match (got, expected) {
            (Some(g), Some(e)) => worst = worst.max((g - e).abs()),
            (None, None) => {}
            _ => {
                return Err(verification(format!(
                    "condition {condition:?}: {got:?} vs reference {expected:?}"
                )))
            }
        }
        if let Some(e) = expected {
            per_experiment
                .entry(&humans[condition].experiment_id)
                .or_default()
                .push(e);
        }
    }
    let means: Vec<f64> = per_experiment
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let overall = means.iter().sum::<f64>() / means.len() as f64;
    worst = worst.max((overall - report.error_consistency).abs());
    if !(worst <= TOL) {
        return Err(verification(format!(
            "kappa differs from the count-based reference by {worst:e}"
        )));
    }
    Ok(json!({ "reference": "2x2 contingency counts", "max_abs_diff": worst, "tolerance": TOL, "passed": true }))
}
