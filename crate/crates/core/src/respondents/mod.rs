//! Entities that answer survey questions given a soft prompt.

mod instruction;
mod parse;
mod remote;
mod synthetic;

use thiserror::Error;

use crate::de::SoftPrompt;
use crate::vsm::SurveyQuestion;

pub use instruction::{
    build_icl_prompt, build_instruction, icl_examples, InstructionPrompt, ICL_COUNTRIES,
    INSTRUCTION_TEMPLATE,
};
pub use parse::{parse_numeric_answer, ParsedAnswer};
pub use remote::{
    CompletionRequest, ModelInfo, RemoteEndpointConfig, RemoteRespondent, Secret, AUTH_TOKEN_ENV,
};
pub use synthetic::{AnswerMode, SyntheticRespondent, SyntheticRespondentConfig};

#[derive(Debug, Error)]
pub enum RespondentError {
    #[error("TransportError after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {message}")]
    HttpStatus { status: u16, message: String },
    #[error("malformed server response: {0}")]
    Protocol(String),
    #[error("DimMismatch: served model expects embed_dim {served}, prompt has {prompt}")]
    DimMismatch { served: usize, prompt: usize },
    #[error("UnparseableAnswer: {text:?}")]
    UnparseableAnswer { text: String },
    #[error("UnknownCountry: {0}")]
    UnknownCountry(String),
    #[error("ShapeMismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

/// Answers one survey question for a soft prompt, on a 1..=5 scale.
///
/// Implementations must be safe to call from many threads at once.
pub trait Respondent: Send + Sync {
    fn answer(
        &self,
        prompt: &SoftPrompt,
        instruction: &InstructionPrompt,
        question: &SurveyQuestion,
    ) -> Result<f64, RespondentError>;

    /// Whether identical inputs always produce identical answers.
    fn is_deterministic(&self) -> bool {
        true
    }

    /// Cheap reachability check.
    fn ping(&self) -> Result<(), RespondentError> {
        Ok(())
    }

    fn describe(&self) -> String;
}
