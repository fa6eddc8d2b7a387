//! Differential evolution over bounded real matrices.

mod config;
mod evolve;
mod ops;
mod soft_prompt;
pub mod streams;

use thiserror::Error;

pub use config::DEConfig;
pub use evolve::{
    evolve, init_population, make_trial, pick_donors, random_search, EvolveOutcome,
    GenerationRecord, Population, RandomSearchOutcome, TrialTrace,
};
pub use ops::{crossover, crossover_traced, mutate, select, Selection};
pub use soft_prompt::{FormatError, ShapeError, SoftPrompt, FORMAT_VERSION, HEADER_LEN, MAGIC};

#[derive(Debug, Error)]
pub enum DeError {
    #[error("ShapeMismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid DE configuration: {0}")]
    InvalidConfig(String),
    #[error("{seeds} seed prompts exceed population_size {population_size}")]
    TooManySeeds { seeds: usize, population_size: usize },
    #[error("FitnessEvaluationFailed at generation {generation}, member {member}: {source}")]
    FitnessEvaluationFailed {
        generation: usize,
        member: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}
