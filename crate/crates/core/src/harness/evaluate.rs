//! Scoring a single candidate: ask all 24 questions, aggregate, score,
//! compare with the target.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{ExperimentConfig, HarnessError, UnparseablePolicy};
use crate::de::SoftPrompt;
use crate::respondents::{build_icl_prompt, build_instruction, InstructionPrompt, Respondent, RespondentError};
use crate::vsm::{aggregate_responses, compute_dimensions, l1_fitness, CulturalDimensions, ResponseSet, SurveyQuestion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    Naive,
    #[serde(rename = "ICL")]
    Icl,
    #[serde(rename = "DEOptimized")]
    DeOptimized,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Naive => "Naive",
            Method::Icl => "ICL",
            Method::DeOptimized => "DEOptimized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub method: Method,
    pub country_code: String,
    pub dimensions: CulturalDimensions,
    pub target: CulturalDimensions,
    pub vsm13_loss: f64,
    pub responses: ResponseSet,
    pub unparseable_count: usize,
}

/// How each question is phrased to the respondent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuestionFraming {
    Plain,
    /// Prefixed with the dataset country's in-context examples.
    Icl,
}

/// Turns candidates into fitness values for one experiment configuration.
pub struct Evaluator<'a> {
    cfg: &'a ExperimentConfig,
    respondent: &'a dyn Respondent,
    instruction: InstructionPrompt,
    questions: Vec<SurveyQuestion>,
    cache: Option<Mutex<HashMap<String, f64>>>,
    cache_hits: AtomicUsize,
    unparseable_total: AtomicUsize,
}

struct Answer {
    value: f64,
    neutral: bool,
}

impl<'a> Evaluator<'a> {
    pub fn new(cfg: &'a ExperimentConfig, respondent: &'a dyn Respondent, framing: QuestionFraming) -> Result<Self, HarnessError> {
        let questions = match framing {
            QuestionFraming::Plain => cfg.dataset.questions().to_vec(),
            QuestionFraming::Icl => cfg
                .dataset
                .questions()
                .iter()
                .map(|q| {
                    Ok(SurveyQuestion {
                        text: build_icl_prompt(&cfg.dataset.country_code, q)?,
                        ..q.clone()
                    })
                })
                .collect::<Result<_, RespondentError>>()?,
        };
        let caching = cfg.cache_fitness.unwrap_or_else(|| respondent.is_deterministic());
        Ok(Self {
            cfg,
            respondent,
            instruction: build_instruction(&cfg.persona_text),
            questions,
            cache: caching.then(|| Mutex::new(HashMap::new())),
            cache_hits: AtomicUsize::new(0),
            unparseable_total: AtomicUsize::new(0),
        })
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    /// Neutral substitutions made so far across all evaluations.
    pub fn unparseable_total(&self) -> usize {
        self.unparseable_total.load(Ordering::Relaxed)
    }

    fn ask(&self, v: &SoftPrompt, q: &SurveyQuestion) -> Result<Answer, HarnessError> {
        let first = self.respondent.answer(v, &self.instruction, q);
        let text = match first {
            Ok(value) => return Ok(Answer { value, neutral: false }),
            Err(RespondentError::UnparseableAnswer { text }) => text,
            Err(e) => return Err(HarnessError::Backend { question: q.index, source: e }),
        };
        match self.cfg.unparseable_policy {
            UnparseablePolicy::Strict => Err(HarnessError::Unparseable {
                questions: vec![q.index],
                sample: text,
            }),
            UnparseablePolicy::RetryThenNeutral => match self.respondent.answer(v, &self.instruction, q) {
                Ok(value) => Ok(Answer { value, neutral: false }),
                Err(RespondentError::UnparseableAnswer { text }) => {
                    warn!("question {}: unparseable answer {text:?}; using midpoint", q.index);
                    Ok(Answer {
                        value: q.midpoint(),
                        neutral: true,
                    })
                }
                Err(e) => Err(HarnessError::Backend { question: q.index, source: e }),
            },
        }
    }

    /// Asks every question `samples_per_question` times and scores the result.
    pub fn evaluate(&self, v: &SoftPrompt, method: Method) -> Result<(f64, EvaluationReport), HarnessError> {
        let k = self.cfg.samples_per_question;
        let jobs: Vec<(&SurveyQuestion, usize)> = self
            .questions
            .iter()
            .flat_map(|q| (0..k).map(move |s| (q, s)))
            .collect();
        let answers: Vec<Result<Answer, HarnessError>> =
            jobs.par_iter().map(|(q, _)| self.ask(v, q)).collect();

        let mut raw = Vec::with_capacity(answers.len());
        let mut unparseable = Vec::new();
        let mut sample = String::new();
        let mut neutral = 0;
        for ((q, _), a) in jobs.iter().zip(answers) {
            match a {
                Ok(a) => {
                    neutral += usize::from(a.neutral);
                    raw.push((q.index, a.value));
                }
                Err(HarnessError::Unparseable { questions, sample: s }) => {
                    unparseable.extend(questions);
                    if sample.is_empty() {
                        sample = s;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if !unparseable.is_empty() {
            unparseable.dedup();
            return Err(HarnessError::Unparseable {
                questions: unparseable,
                sample,
            });
        }
        self.unparseable_total.fetch_add(neutral, Ordering::Relaxed);

        let responses = aggregate_responses(self.cfg.dataset.questions(), raw)?;
        let dimensions = compute_dimensions(&responses, &self.cfg.dataset.constants);
        let loss = l1_fitness(&dimensions, &self.cfg.dataset.target);
        Ok((
            loss,
            EvaluationReport {
                method,
                country_code: self.cfg.dataset.country_code.clone(),
                dimensions,
                target: self.cfg.dataset.target,
                vsm13_loss: loss,
                responses,
                unparseable_count: neutral,
            },
        ))
    }

    /// Fitness for the optimizer: cached for deterministic backends, and
    /// `+inf` when strict parsing rejects the candidate.
    pub fn fitness(&self, v: &SoftPrompt) -> Result<f64, HarnessError> {
        let key = self.cache.as_ref().map(|_| v.digest());
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(&f) = cache.lock().unwrap().get(key) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(f);
            }
        }
        let f = match self.evaluate(v, Method::DeOptimized) {
            Ok((f, _)) => f,
            Err(HarnessError::Unparseable { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            cache.lock().unwrap().insert(key, f);
        }
        Ok(f)
    }
}

/// Scores one soft prompt with plain question framing.
pub fn evaluate_candidate(
    v: &SoftPrompt,
    cfg: &ExperimentConfig,
    respondent: &dyn Respondent,
) -> Result<(f64, EvaluationReport), HarnessError> {
    Evaluator::new(cfg, respondent, QuestionFraming::Plain)?.evaluate(v, Method::DeOptimized)
}

/// The unsteered model: no virtual tokens.
pub fn run_naive_baseline(cfg: &ExperimentConfig, respondent: &dyn Respondent) -> Result<EvaluationReport, HarnessError> {
    Evaluator::new(cfg, respondent, QuestionFraming::Plain)?
        .evaluate(&SoftPrompt::empty(), Method::Naive)
        .map(|(_, r)| r)
}

/// No virtual tokens; each question carries the country's in-context examples.
pub fn run_icl_baseline(cfg: &ExperimentConfig, respondent: &dyn Respondent) -> Result<EvaluationReport, HarnessError> {
    Evaluator::new(cfg, respondent, QuestionFraming::Icl)?
        .evaluate(&SoftPrompt::empty(), Method::Icl)
        .map(|(_, r)| r)
}
