//! End-to-end experiments: candidate -> survey answers -> dimensions ->
//! loss, the Naive and ICL baselines, DE runs and ablation sweeps.

pub mod ablation;
mod config;
mod evaluate;
mod experiment;

use thiserror::Error;

use crate::de::{DeError, FormatError};
use crate::respondents::RespondentError;
use crate::vsm::VsmError;

pub use ablation::{run_ablation, write_ablation_csv, AblationGrid, AblationRow, AblationSetting, Sampling};
pub use config::{
    apply_overrides, read_config_file, BackendConfig, ConfigFile, DatasetRef, ExperimentConfig,
    PlantedOptimum, RemoteBackendConfig, UnparseablePolicy, BUILTIN_PLACEHOLDER,
};
pub use evaluate::{
    evaluate_candidate, run_icl_baseline, run_naive_baseline, EvaluationReport, Evaluator, Method,
    QuestionFraming,
};
pub use experiment::{
    run_de_experiment, run_de_experiment_observed, run_random_search, write_json,
    write_radar_csv, DeRun, OptimizationSummary, RunReport, BEST_PROMPT_FILE, CHECKPOINT_FILE,
    HISTORY_FILE, RADAR_FILE, REPORT_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("BackendError on question {question}: {source}")]
    Backend {
        question: u8,
        #[source]
        source: RespondentError,
    },
    #[error("UnparseableAnswer on question(s) {questions:?}; first reply {sample:?}")]
    Unparseable { questions: Vec<u8>, sample: String },
    #[error(transparent)]
    Respondent(#[from] RespondentError),
    #[error(transparent)]
    Survey(#[from] VsmError),
    #[error(transparent)]
    Optimizer(#[from] DeError),
    #[error("FormatError: {0}")]
    Format(#[from] FormatError),
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Short category name used for exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Backend { source, .. } | HarnessError::Respondent(source) => match source {
                RespondentError::Transport { .. } => "TransportError",
                RespondentError::HttpStatus { .. } => "HttpError",
                RespondentError::Protocol(_) => "ProtocolError",
                RespondentError::DimMismatch { .. } => "DimMismatch",
                RespondentError::UnparseableAnswer { .. } => "UnparseableAnswer",
                RespondentError::UnknownCountry(_) => "UnknownCountry",
                RespondentError::ShapeMismatch { .. } => "ShapeMismatch",
            },
            HarnessError::Unparseable { .. } => "UnparseableAnswer",
            HarnessError::Survey(_) => "SurveyError",
            HarnessError::Optimizer(DeError::FitnessEvaluationFailed { source, .. }) => {
                match source.downcast_ref::<HarnessError>() {
                    Some(inner) => inner.category(),
                    None => "FitnessEvaluationFailed",
                }
            }
            HarnessError::Optimizer(_) => "OptimizerError",
            HarnessError::Format(_) => "FormatError",
            HarnessError::Config(_) => "ConfigError",
            HarnessError::Validation(_) => "ValidationError",
            HarnessError::Io(_) | HarnessError::Json(_) | HarnessError::Csv(_) => "IoError",
        }
    }
}
