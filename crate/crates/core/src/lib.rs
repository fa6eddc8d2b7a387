//! Cultural alignment of text-generating models by evolving soft prompts.
//!
//! A candidate soft prompt is scored by asking a [`respondents::Respondent`]
//! the 24 VSM13 content questions, turning the answers into the six
//! cultural-dimension scores, and taking the mean absolute error against a
//! country's target profile. [`de`] minimizes that score with differential
//! evolution; [`harness`] wires the pieces together and writes artifacts.

pub mod de;
pub mod harness;
pub mod respondents;
pub mod vsm;

pub use de::{DEConfig, GenerationRecord, Population, SoftPrompt};
pub use respondents::{InstructionPrompt, Respondent, RespondentError};
pub use vsm::{
    aggregate_responses, compute_dimensions, l1_fitness, CulturalDimensions, DimensionConstants,
    ResponseSet, SurveyDataset, SurveyQuestion,
};
