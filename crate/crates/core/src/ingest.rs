//! Trial-response ingestion.
//!
//! Human and model responses arrive as one CSV row per (observer, stimulus)
//! trial. They are validated against a class vocabulary and folded into one
//! binary correctness matrix per condition, which is the unit every
//! consistency computation works on.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Predicted class recorded when an observer gave no response. Always counts
/// as incorrect.
pub const NO_RESPONSE: &str = "na";

/// Exact header of a trial CSV.
pub const TRIAL_HEADER: [&str; 8] = [
    "experiment_id",
    "condition_id",
    "observer_id",
    "stimulus_id",
    "predicted_class",
    "true_class",
    "shape_class",
    "texture_class",
];

/// The sixteen coarse classes of the model-vs-human benchmark.
pub const BENCHMARK_CLASSES: [&str; 16] = [
    "airplane", "bear", "bicycle", "bird", "boat", "bottle", "car", "cat", "chair", "clock", "dog", "elephant",
    "keyboard", "knife", "oven", "truck",
];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unexpected trial header {found:?}, expected {:?}", TRIAL_HEADER)]
    Header { found: Vec<String> },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: class {class:?} is not in the vocabulary")]
    Vocabulary { line: u64, class: String },
    #[error("line {line}: duplicate trial {key}")]
    Duplicate { line: u64, key: String },
    #[error("line {line}: shape_class and texture_class must both be set or both be empty")]
    CueMismatch { line: u64 },
    #[error("condition {condition:?} has ragged coverage; missing (observer, stimulus) pairs: {missing:?}")]
    Coverage {
        condition: String,
        missing: Vec<(String, String)>,
    },
    #[error("condition {condition:?}: stimulus {stimulus:?} has conflicting true classes")]
    InconsistentTruth { condition: String, stimulus: String },
    #[error("condition id {condition:?} appears in experiments {first:?} and {second:?}")]
    ConditionClash {
        condition: String,
        first: String,
        second: String,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Finite set of class labels that responses are validated against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    classes: Vec<String>,
}

impl Vocabulary {
    pub fn new<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            classes: classes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn benchmark() -> Self {
        Self::new(BENCHMARK_CLASSES)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

/// One observer's response to one stimulus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment_id: String,
    pub condition_id: String,
    pub observer_id: String,
    pub stimulus_id: String,
    pub predicted_class: String,
    pub true_class: String,
    pub shape_class: Option<String>,
    pub texture_class: Option<String>,
}

impl TrialRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted_class != NO_RESPONSE && self.predicted_class == self.true_class
    }

    pub fn is_cue_conflict(&self) -> bool {
        self.shape_class.is_some() && self.texture_class.is_some()
    }

    fn key(&self) -> (&str, &str, &str, &str) {
        (
            &self.experiment_id,
            &self.condition_id,
            &self.observer_id,
            &self.stimulus_id,
        )
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    experiment_id: String,
    condition_id: String,
    observer_id: String,
    stimulus_id: String,
    predicted_class: String,
    true_class: String,
    shape_class: String,
    texture_class: String,
}

pub fn load_trials(path: impl AsRef<Path>, vocabulary: &Vocabulary) -> Result<Vec<TrialRecord>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trials(file, vocabulary)
}

/// Parses and validates trial rows. Line numbers in errors are 1-based and
/// count the header.
pub fn read_trials<R: Read>(reader: R, vocabulary: &Vocabulary) -> Result<Vec<TrialRecord>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers().map_err(|e| IngestError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(TRIAL_HEADER.iter().copied()) {
        return Err(IngestError::Header {
            found: header.iter().map(str::to_owned).collect(),
        });
    }

    let mut trials = Vec::new();
    let mut seen = HashSet::new();
    for row in csv.deserialize::<RawRow>() {
        let row = row.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = trials.len() as u64 + 2;
        let record = validate_row(row, vocabulary, line)?;
        let key = record.key();
        let owned_key = (key.0.to_owned(), key.1.to_owned(), key.2.to_owned(), key.3.to_owned());
        if !seen.insert(owned_key) {
            return Err(IngestError::Duplicate {
                line,
                key: format!("{}/{}/{}/{}", key.0, key.1, key.2, key.3),
            });
        }
        trials.push(record);
    }
    Ok(trials)
}

fn validate_row(row: RawRow, vocabulary: &Vocabulary, line: u64) -> Result<TrialRecord, IngestError> {
    let check = |class: &str| {
        if vocabulary.contains(class) {
            Ok(())
        } else {
            Err(IngestError::Vocabulary {
                line,
                class: class.to_owned(),
            })
        }
    };
    for (name, value) in [
        ("experiment_id", &row.experiment_id),
        ("condition_id", &row.condition_id),
        ("observer_id", &row.observer_id),
        ("stimulus_id", &row.stimulus_id),
    ] {
        if value.is_empty() {
            return Err(IngestError::Parse {
                line,
                message: format!("empty {name}"),
            });
        }
    }
    if row.predicted_class != NO_RESPONSE {
        check(&row.predicted_class)?;
    }
    check(&row.true_class)?;

    let optional = |s: String| if s.is_empty() { None } else { Some(s) };
    let shape_class = optional(row.shape_class);
    let texture_class = optional(row.texture_class);
    match (&shape_class, &texture_class) {
        (Some(shape), Some(texture)) => {
            check(shape)?;
            check(texture)?;
        }
        (None, None) => {}
        _ => return Err(IngestError::CueMismatch { line }),
    }

    Ok(TrialRecord {
        experiment_id: row.experiment_id,
        condition_id: row.condition_id,
        observer_id: row.observer_id,
        stimulus_id: row.stimulus_id,
        predicted_class: row.predicted_class,
        true_class: row.true_class,
        shape_class,
        texture_class,
    })
}

pub fn write_trials<W: Write>(writer: W, trials: &[TrialRecord]) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(TRIAL_HEADER)?;
    for t in trials {
        csv.write_record([
            t.experiment_id.as_str(),
            &t.condition_id,
            &t.observer_id,
            &t.stimulus_id,
            &t.predicted_class,
            &t.true_class,
            t.shape_class.as_deref().unwrap_or(""),
            t.texture_class.as_deref().unwrap_or(""),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_trials(path: impl AsRef<Path>, trials: &[TrialRecord]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_trials(file, trials).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

/// Binary correctness matrix of one condition: one row per observer, one
/// column per stimulus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionResponseMatrix {
    pub experiment_id: String,
    pub condition_id: String,
    pub observer_ids: Vec<String>,
    pub stimulus_ids: Vec<String>,
    pub true_classes: Vec<String>,
    pub correctness: Vec<Vec<bool>>,
}

impl ConditionResponseMatrix {
    /// Builds a matrix directly from rows, with generated ids. Mostly useful
    /// for synthetic data.
    pub fn from_rows(experiment_id: &str, condition_id: &str, rows: Vec<Vec<bool>>) -> Self {
        let n_stimuli = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_stimuli), "ragged rows");
        Self {
            experiment_id: experiment_id.to_owned(),
            condition_id: condition_id.to_owned(),
            observer_ids: (0..rows.len()).map(|j| format!("subject-{j:02}")).collect(),
            stimulus_ids: (0..n_stimuli).map(|i| format!("s{i:05}")).collect(),
            true_classes: vec![String::new(); n_stimuli],
            correctness: rows,
        }
    }

    pub fn n_observers(&self) -> usize {
        self.correctness.len()
    }

    pub fn n_stimuli(&self) -> usize {
        self.stimulus_ids.len()
    }

    pub fn row(&self, observer: usize) -> &[bool] {
        &self.correctness[observer]
    }

    pub fn observer_accuracy(&self, observer: usize) -> f64 {
        accuracy(&self.correctness[observer])
    }

    /// Mean accuracy over observers.
    pub fn mean_accuracy(&self) -> f64 {
        if self.correctness.is_empty() {
            return 0.0;
        }
        (0..self.n_observers()).map(|j| self.observer_accuracy(j)).sum::<f64>() / self.n_observers() as f64
    }
}

pub(crate) fn accuracy(row: &[bool]) -> f64 {
    if row.is_empty() {
        return 0.0;
    }
    row.iter().filter(|&&c| c).count() as f64 / row.len() as f64
}

/// Conditions keyed by `condition_id`. Condition ids are unique across
/// experiments.
pub type ConditionSet = BTreeMap<String, ConditionResponseMatrix>;

/// Groups trials into per-condition matrices. Observers and stimuli are
/// ordered lexicographically by id.
pub fn build_matrices(trials: &[TrialRecord]) -> Result<ConditionSet, IngestError> {
    struct Group<'a> {
        experiment_id: &'a str,
        observers: BTreeSet<&'a str>,
        stimuli: BTreeMap<&'a str, &'a str>,
        cells: BTreeMap<(&'a str, &'a str), bool>,
    }

    let mut groups: BTreeMap<&str, Group> = BTreeMap::new();
    for t in trials {
        let group = groups.entry(&t.condition_id).or_insert_with(|| Group {
            experiment_id: &t.experiment_id,
            observers: BTreeSet::new(),
            stimuli: BTreeMap::new(),
            cells: BTreeMap::new(),
        });
        if group.experiment_id != t.experiment_id {
            return Err(IngestError::ConditionClash {
                condition: t.condition_id.clone(),
                first: group.experiment_id.to_owned(),
                second: t.experiment_id.clone(),
            });
        }
        group.observers.insert(&t.observer_id);
        let truth = group.stimuli.entry(&t.stimulus_id).or_insert(&t.true_class);
        if *truth != t.true_class {
            return Err(IngestError::InconsistentTruth {
                condition: t.condition_id.clone(),
                stimulus: t.stimulus_id.clone(),
            });
        }
        group.cells.insert((&t.observer_id, &t.stimulus_id), t.is_correct());
    }

    let mut out = ConditionSet::new();
    for (condition, group) in groups {
        let mut missing = Vec::new();
        let mut correctness = Vec::with_capacity(group.observers.len());
        for &observer in &group.observers {
            let mut row = Vec::with_capacity(group.stimuli.len());
            for &stimulus in group.stimuli.keys() {
                match group.cells.get(&(observer, stimulus)) {
                    Some(&c) => row.push(c),
                    None => {
                        missing.push((observer.to_owned(), stimulus.to_owned()));
                        row.push(false);
                    }
                }
            }
            correctness.push(row);
        }
        if !missing.is_empty() {
            return Err(IngestError::Coverage {
                condition: condition.to_owned(),
                missing,
            });
        }
        out.insert(
            condition.to_owned(),
            ConditionResponseMatrix {
                experiment_id: group.experiment_id.to_owned(),
                condition_id: condition.to_owned(),
                observer_ids: group.observers.iter().map(|s| s.to_string()).collect(),
                stimulus_ids: group.stimuli.keys().map(|s| s.to_string()).collect(),
                true_classes: group.stimuli.values().map(|s| s.to_string()).collect(),
                correctness,
            },
        );
    }
    Ok(out)
}

/// Per-experiment condition lists. Each condition of an experiment with `C`
/// conditions carries weight `1/C` inside its experiment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetWeights {
    experiments: BTreeMap<String, Vec<String>>,
}

impl DatasetWeights {
    pub fn from_conditions(matrices: &ConditionSet) -> Self {
        let mut experiments: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (condition, m) in matrices {
            experiments
                .entry(m.experiment_id.clone())
                .or_default()
                .push(condition.clone());
        }
        Self { experiments }
    }

    /// Builds weights from explicit `(experiment, condition)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut experiments: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (experiment, condition) in pairs {
            let list = experiments.entry(experiment.to_owned()).or_default();
            if !list.iter().any(|c| c == condition) {
                list.push(condition.to_owned());
            }
        }
        Self { experiments }
    }

    pub fn experiments(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.experiments.iter().map(|(e, c)| (e.as_str(), c.as_slice()))
    }

    pub fn experiment_count(&self) -> usize {
        self.experiments.len()
    }

    pub fn condition_count(&self) -> usize {
        self.experiments.values().map(Vec::len).sum()
    }

    pub fn conditions(&self) -> impl Iterator<Item = &str> {
        self.experiments.values().flatten().map(String::as_str)
    }

    /// Weight of `condition` within its experiment (`1/C`).
    pub fn weight(&self, condition: &str) -> Option<f64> {
        self.experiments
            .values()
            .find(|list| list.iter().any(|c| c == condition))
            .map(|list| 1.0 / list.len() as f64)
    }

    /// Weight of `condition` in the final average over experiments
    /// (`1/(C * E)`).
    pub fn global_weight(&self, condition: &str) -> Option<f64> {
        self.weight(condition).map(|w| w / self.experiments.len() as f64)
    }
}

/// Which conditions to drop before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExclusionPolicy {
    /// Drop the named conditions.
    Conditions(Vec<String>),
    /// Drop conditions whose mean human accuracy is below the threshold.
    MinHumanAccuracy(f64),
}

impl Default for ExclusionPolicy {
    fn default() -> Self {
        Self::Conditions(Vec::new())
    }
}

#[derive(Debug, Clone)]
pub struct Exclusion {
    pub kept: ConditionSet,
    pub removed: Vec<String>,
    pub warnings: Vec<String>,
    pub weights: DatasetWeights,
}

pub fn exclude_conditions(matrices: &ConditionSet, policy: &ExclusionPolicy) -> Result<Exclusion, IngestError> {
    let mut kept = matrices.clone();
    let mut removed = Vec::new();
    let mut warnings = Vec::new();
    match policy {
        ExclusionPolicy::Conditions(list) => {
            for condition in list {
                if kept.remove(condition).is_some() {
                    removed.push(condition.clone());
                } else {
                    warnings.push(format!("excluded condition {condition:?} not present in dataset"));
                }
            }
        }
        ExclusionPolicy::MinHumanAccuracy(threshold) => {
            if !(0.0..=1.0).contains(threshold) {
                return Err(IngestError::Parameter(format!(
                    "accuracy threshold {threshold} outside [0, 1]"
                )));
            }
            kept.retain(|condition, m| {
                let keep = m.mean_accuracy() >= *threshold;
                if !keep {
                    removed.push(condition.clone());
                }
                keep
            });
        }
    }
    let weights = DatasetWeights::from_conditions(&kept);
    Ok(Exclusion {
        kept,
        removed,
        warnings,
        weights,
    })
}
