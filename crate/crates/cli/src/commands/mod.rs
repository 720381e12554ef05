pub mod csf;
pub mod filter;
pub mod learn;
pub mod metrics;
pub mod pareto;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use hvalign::ingest::{build_matrices, exclude_conditions, load_trials};
use hvalign::{ConditionSet, DatasetWeights, ExclusionPolicy, TrialRecord, UndefinedPolicy, Vocabulary};
use serde::Serialize;

use crate::error::usage;
use crate::manifest::Run;

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Undefined {
    Drop,
    ImputeZero,
}

impl From<Undefined> for UndefinedPolicy {
    fn from(u: Undefined) -> Self {
        match u {
            Undefined::Drop => Self::Drop,
            Undefined::ImputeZero => Self::ImputeZero,
        }
    }
}

/// Human trial data and which of its conditions to keep.
#[derive(Args, Debug, Clone, Serialize)]
pub struct HumanData {
    /// Human trial CSV
    #[arg(long)]
    pub humans: PathBuf,

    /// Class vocabulary, comma separated (default: the 16 benchmark classes)
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,

    /// Condition to leave out; may be repeated
    #[arg(long, conflicts_with = "min_human_accuracy")]
    pub exclude: Vec<String>,

    /// Leave out conditions whose mean human accuracy is below this
    #[arg(long)]
    pub min_human_accuracy: Option<f64>,

    /// How kappa pairs that are undefined enter condition means
    #[arg(long, value_enum, default_value_t = Undefined::Drop)]
    pub undefined: Undefined,
}

pub struct Humans {
    pub matrices: ConditionSet,
    pub weights: DatasetWeights,
    pub removed: Vec<String>,
}

pub fn vocabulary(classes: &[String]) -> Vocabulary {
    if classes.is_empty() {
        Vocabulary::benchmark()
    } else {
        Vocabulary::new(classes.iter().cloned())
    }
}

/// Loads trials; cue-conflict trials are split off since they only feed the
/// shape bias.
pub fn load_split(path: &Path, vocabulary: &Vocabulary, run: &mut Run) -> Result<(Vec<TrialRecord>, Vec<TrialRecord>)> {
    run.input(path);
    let trials = load_trials(path, vocabulary)?;
    if trials.is_empty() {
        return Err(usage(format!("{} contains no trials", path.display())));
    }
    Ok(trials.into_iter().partition(|t| !t.is_cue_conflict()))
}

impl HumanData {
    pub fn load(&self, run: &mut Run) -> Result<Humans> {
        let vocabulary = vocabulary(&self.classes);
        // human cue-conflict trials carry no information the metrics use
        let (trials, _) = load_split(&self.humans, &vocabulary, run)?;
        let all = build_matrices(&trials).context("building human response matrices")?;
        let policy = match self.min_human_accuracy {
            Some(t) => ExclusionPolicy::MinHumanAccuracy(t),
            None => ExclusionPolicy::Conditions(self.exclude.clone()),
        };
        let exclusion = exclude_conditions(&all, &policy)?;
        for w in &exclusion.warnings {
            eprintln!("warning: {w}");
        }
        Ok(Humans {
            matrices: exclusion.kept,
            weights: exclusion.weights,
            removed: exclusion.removed,
        })
    }
}

/// A CSV writer into a registered artifact.
pub fn csv_artifact(run: &mut Run, name: &str) -> Result<csv::Writer<std::fs::File>> {
    let path = run.artifact(name);
    csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))
}
