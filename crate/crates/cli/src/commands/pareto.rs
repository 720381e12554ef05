use anyhow::Result;
use clap::Args;
use hvalign::oracle::brute_force_frontier;
use hvalign::pareto::{condition_sweep_with, dataset_frontier, DEFAULT_POINT_CAP, POINT_TOLERANCE};
use hvalign::{OracleBudget, UndefinedPolicy};
use serde::Serialize;
use serde_json::json;

use super::{csv_artifact, HumanData};
use crate::error::{usage, verification};
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug, Clone, Serialize)]
pub struct ParetoArgs {
    #[command(flatten)]
    pub data: HumanData,

    /// Largest number of intermediate frontier points before giving up
    #[arg(long, default_value_t = DEFAULT_POINT_CAP)]
    pub cap: usize,

    #[command(flatten)]
    pub common: Common,
}

pub fn run(args: &ParetoArgs) -> Result<()> {
    let policy: UndefinedPolicy = args.data.undefined.into();
    if args.common.verify && policy != UndefinedPolicy::Drop {
        return Err(usage(
            "--verify compares against the enumeration reference, which drops undefined pairs",
        ));
    }
    let mut run = Run::start(&args.common.out, "pareto", args, args.common.threads as usize)?;
    let humans = args.data.load(&mut run)?;
    let frontier = dataset_frontier(&humans.matrices, &humans.weights, policy, args.cap)?;

    if args.common.verify {
        let reference = brute_force_frontier(&humans.matrices, &humans.weights, &OracleBudget::default())?;
        let same = reference.len() == frontier.points.len()
            && reference.iter().zip(&frontier.points).all(|(r, p)| {
                (r.kappa - p.kappa).abs() <= POINT_TOLERANCE && (r.accuracy - p.accuracy).abs() <= POINT_TOLERANCE
            });
        if !same {
            return Err(verification(format!(
                "frontier has {} points, joint enumeration gives {}",
                frontier.points.len(),
                reference.len()
            )));
        }
        run.verification = Some(json!({
            "reference": "joint enumeration of all response vectors",
            "points": reference.len(),
            "tolerance": POINT_TOLERANCE,
            "passed": true,
        }));
    }

    let path = run.artifact("frontier.csv");
    frontier.write_csv(std::fs::File::create(path)?)?;

    let mut sweeps = csv_artifact(&mut run, "sweeps.csv")?;
    sweeps.write_record(["condition_id", "k", "accuracy", "kappa", "dropped_pairs"])?;
    for condition in humans.weights.conditions() {
        for o in condition_sweep_with(&humans.matrices[condition], policy) {
            sweeps.write_record([
                condition.to_owned(),
                o.k.to_string(),
                o.accuracy.to_string(),
                o.kappa_mean.map(|k| k.to_string()).unwrap_or_default(),
                o.dropped_pairs.to_string(),
            ])?;
        }
    }
    sweeps.flush()?;

    let max = frontier.max_consistency().map(|(i, p)| {
        json!({
            "kappa": p.kappa,
            "accuracy": p.accuracy,
            "certificate": frontier.certificate(i),
        })
    });
    run.write_json("max_point.json", &max)?;
    run.finish()?;

    println!("frontier points    {}", frontier.len());
    if let Some((_, p)) = frontier.max_consistency() {
        println!("max consistency    {:.4} at accuracy {:.4}", p.kappa, p.accuracy);
    }
    Ok(())
}
