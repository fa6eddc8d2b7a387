//! A deterministic stand-in respondent with a known optimum.
//!
//! Each question `q` owns a fixed unit vector `w_q` derived from the
//! projection seed. The answer to `q` for prompt `v` is
//! `clip(3 + 2 * tanh(w_q . flatten(v - v0)), 1, 5)`, where `v0` is the
//! planted optimum (zero when unset). At `v = v0` every answer is 3.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{InstructionPrompt, Respondent, RespondentError};
use crate::de::streams::{stream, TAG_INIT};
use crate::de::SoftPrompt;
use crate::vsm::SurveyQuestion;

const TAG_PROJECTION: u64 = 0x5052_4f4a;
const SQUASH_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    Continuous,
    /// Rounded to the nearest integer answer.
    Quantized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRespondentConfig {
    pub projection_seed: u64,
    pub mode: AnswerMode,
    pub planted_optimum: Option<SoftPrompt>,
}

impl SyntheticRespondentConfig {
    /// Plants a uniform random optimum in `[-half_width, half_width]`.
    pub fn random_optimum(seed: u64, token_count: usize, embed_dim: usize, half_width: f32) -> SoftPrompt {
        use rand::Rng;
        let mut rng = stream(seed, TAG_INIT, u64::MAX, 0);
        SoftPrompt::from_fn(token_count, embed_dim, |_, _| rng.random_range(-half_width..=half_width))
    }
}

pub struct SyntheticRespondent {
    cfg: SyntheticRespondentConfig,
    projections: RwLock<HashMap<(u8, usize), Arc<Vec<f64>>>>,
}

impl SyntheticRespondent {
    pub fn new(cfg: SyntheticRespondentConfig) -> Self {
        Self {
            cfg,
            projections: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &SyntheticRespondentConfig {
        &self.cfg
    }

    /// The unit projection vector for `question` over `len` flattened entries.
    pub fn projection(&self, question: u8, len: usize) -> Arc<Vec<f64>> {
        if let Some(w) = self.projections.read().unwrap().get(&(question, len)) {
            return Arc::clone(w);
        }
        let mut rng = stream(self.cfg.projection_seed, TAG_PROJECTION, u64::from(question), len as u64);
        let mut w: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            w.iter_mut().for_each(|x| *x /= norm);
        } else if let Some(first) = w.first_mut() {
            *first = 1.0;
        }
        let w = Arc::new(w);
        self.projections
            .write()
            .unwrap()
            .entry((question, len))
            .or_insert(w)
            .clone()
    }

    /// The answer for `v` on `question`. An empty prompt is read as the
    /// zero matrix of the planted shape, or answers 3 without a planted optimum.
    pub fn synthetic_answer(&self, v: &SoftPrompt, question: &SurveyQuestion) -> Result<f64, RespondentError> {
        if v.is_empty() {
            return match &self.cfg.planted_optimum {
                Some(planted) => {
                    let (t, d) = planted.shape();
                    self.synthetic_answer(&SoftPrompt::zeros(t, d), question)
                }
                None => Ok(3.0),
            };
        }
        if let Some(planted) = &self.cfg.planted_optimum {
            if planted.shape() != v.shape() {
                return Err(RespondentError::ShapeMismatch {
                    expected: planted.shape(),
                    actual: v.shape(),
                });
            }
        }
        let w = self.projection(question.index, v.values().len());
        let projected: f64 = match &self.cfg.planted_optimum {
            Some(planted) => v
                .values()
                .iter()
                .zip(planted.values())
                .zip(w.iter())
                .map(|((&x, &x0), &wi)| wi * (f64::from(x) - f64::from(x0)))
                .sum(),
            None => v.values().iter().zip(w.iter()).map(|(&x, &wi)| wi * f64::from(x)).sum(),
        };
        let r = (3.0 + SQUASH_SCALE * projected.tanh()).clamp(1.0, 5.0);
        Ok(match self.cfg.mode {
            AnswerMode::Continuous => r,
            AnswerMode::Quantized => r.round(),
        })
    }
}

impl Respondent for SyntheticRespondent {
    fn answer(
        &self,
        prompt: &SoftPrompt,
        _instruction: &InstructionPrompt,
        question: &SurveyQuestion,
    ) -> Result<f64, RespondentError> {
        self.synthetic_answer(prompt, question)
    }

    fn describe(&self) -> String {
        format!(
            "synthetic(seed={}, mode={:?}, planted={})",
            self.cfg.projection_seed,
            self.cfg.mode,
            self.cfg.planted_optimum.is_some()
        )
    }
}
