//! The fixed numeric-answer instruction and the per-country in-context
//! example registry.

use serde::Serialize;

use super::RespondentError;
use crate::vsm::SurveyQuestion;

const TEMPLATE_HEAD: &str = "<|start_header_id|>system<|end_header_id|>\n\
You are an assistant that can only\n\
reply with 1, 2, 3, 4, or 5 \n\
based on a persona given to you.\n";
const TEMPLATE_TAIL: &str = "\nNumerical Answer:<|eot_id|>";

/// The Llama-3 style system block with a `{prompt}` persona slot.
pub const INSTRUCTION_TEMPLATE: &str = "<|start_header_id|>system<|end_header_id|>\n\
You are an assistant that can only\n\
reply with 1, 2, 3, 4, or 5 \n\
based on a persona given to you.\n\
{prompt}\n\
Numerical Answer:<|eot_id|>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstructionPrompt {
    pub system_text: String,
    pub persona_text: String,
}

impl InstructionPrompt {
    /// Recovers the persona from a rendered system block.
    pub fn extract_persona(system_text: &str) -> Option<&str> {
        system_text
            .strip_prefix(TEMPLATE_HEAD)?
            .strip_suffix(TEMPLATE_TAIL)
    }
}

pub fn build_instruction(persona: &str) -> InstructionPrompt {
    InstructionPrompt {
        system_text: format!("{TEMPLATE_HEAD}{persona}{TEMPLATE_TAIL}"),
        persona_text: persona.to_string(),
    }
}

/// Two cultural example sentences per supported country code.
pub fn icl_examples(country_code: &str) -> Option<[&'static str; 2]> {
    let examples = match country_code.to_ascii_uppercase().as_str() {
        "SA" => [
            "In Saudi Arabia, family is highly valued, and decisions are often made with the family's best interest in mind.",
            "Hospitality is a key cultural value in Saudi Arabia, and guests are treated with great respect and generosity.",
        ],
        "CN" => [
            "In China, collectivism is emphasized, and people often prioritize group harmony over individual needs.",
            "Respect for elders and authority is a deeply ingrained cultural value in China.",
        ],
        "US" => [
            "In the United States, individualism is highly valued, and personal freedom and independence are often prioritized.",
            "The US culture values diversity and equality, and people are encouraged to express their unique identities.",
        ],
        "IN" => [
            "In India, family and community play a central role in decision-making, and interdependence is valued.",
            "Respect for traditions and religious practices is a significant cultural value in India.",
        ],
        _ => return None,
    };
    Some(examples)
}

pub const ICL_COUNTRIES: [&str; 4] = ["SA", "US", "CN", "IN"];

/// The country's two examples, in fixed order, followed by the question.
pub fn build_icl_prompt(country_code: &str, question: &SurveyQuestion) -> Result<String, RespondentError> {
    let [first, second] = icl_examples(country_code)
        .ok_or_else(|| RespondentError::UnknownCountry(country_code.to_string()))?;
    Ok(format!(
        "Example 1: {first}\nExample 2: {second}\n{}",
        question.text
    ))
}
