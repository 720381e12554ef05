//! Tools for measuring and improving the behavioural alignment of image
//! classifiers with human observers.
//!
//! * [`ingest`]: trial CSVs, per-condition correctness matrices, weights.
//! * [`metrics`]: error consistency (Cohen's kappa), shape bias, OOD accuracy.
//! * [`pareto`]: exact accuracy/consistency frontier of an ideal responder.
//! * [`psychophys`]: contrast sensitivity and optical transfer models, and
//!   fitting a Gaussian blur to them.
//! * [`imagefilter`]: blur, resize and Fourier-domain filters.
//! * [`filterlearn`]: gradient-based learning of a Fourier filter.
//! * [`oracle`]: brute-force references for testing the above.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod filterlearn;
pub mod imagefilter;
pub mod ingest;
pub mod metrics;
pub mod oracle;
pub mod pareto;
pub mod psychophys;

pub use filterlearn::{LearnConfig, LearnError, LearningSet, LinearSoftmaxScorer, Scorer, TrainOutcome};
pub use imagefilter::{FilterError, Image, Quadrant, SpectralFilter};
pub use ingest::{
    ConditionResponseMatrix, ConditionSet, DatasetWeights, ExclusionPolicy, IngestError, TrialRecord, Vocabulary,
};
pub use metrics::{AlignmentReport, MetricsError, ModelResponses, UndefinedPolicy};
pub use oracle::{OracleBudget, OracleError};
pub use pareto::{ParetoError, ParetoFrontier, ParetoPoint};
pub use psychophys::{FitConfig, FitResult, PsychophysError};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pareto(#[from] ParetoError),
    #[error(transparent)]
    Psychophys(#[from] PsychophysError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
