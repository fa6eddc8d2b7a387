//! HTTP client for a served model that accepts raw prompt embeddings.
//!
//! Wire contract (JSON over HTTP):
//!
//! * `GET {base_url}/v1/model-info` returns `{"model": string, "embed_dim": int}`.
//!   Called once per client to check the prompt width.
//! * `POST {base_url}/v1/embedded-completion` with
//!   `{"model", "virtual_tokens": [[f32; dim]; T], "instruction", "question",
//!   "max_new_tokens", "temperature"}` returns `{"text": string}`.
//! * Errors are non-2xx statuses with `{"error": string}`.
//!
//! Transport failures, 429 and 5xx responses are retried with exponential
//! backoff; at most `1 + max_retries` requests are sent per call.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::parse::{parse_numeric_answer, ParsedAnswer};
use super::{InstructionPrompt, Respondent, RespondentError};
use crate::de::SoftPrompt;
use crate::vsm::SurveyQuestion;

/// Environment variable read for the bearer token by default.
pub const AUTH_TOKEN_ENV: &str = "CULTALIGN_API_TOKEN";

/// A credential that never appears in `Debug` output or logs.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var).ok().filter(|s| !s.is_empty()).map(Self)
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEndpointConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub model_name: String,
    pub auth_token: Option<Secret>,
    pub max_new_tokens: u32,
    pub temperature: f64,
    /// Upper bound on concurrent requests from one client.
    pub max_in_flight: usize,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    /// Skip the `model-info` width check.
    pub skip_handshake: bool,
}

impl RemoteEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            model_name: model_name.into(),
            auth_token: None,
            max_new_tokens: 16,
            temperature: 0.0,
            max_in_flight: 4,
            backoff_base: Duration::from_millis(200),
            backoff_max: Duration::from_secs(10),
            skip_handshake: false,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX))
            .min(self.backoff_max)
    }
}

#[derive(Debug, Serialize)]
pub struct CompletionRequest<'a> {
    pub model: &'a str,
    pub virtual_tokens: Vec<&'a [f32]>,
    pub instruction: &'a str,
    pub question: &'a str,
    pub max_new_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    text: String,
}

#[derive(Debug, Deserialize)]
pub struct ModelInfo {
    pub model: String,
    pub embed_dim: usize,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(RespondentError),
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteRespondent {
    cfg: RemoteEndpointConfig,
    agent: ureq::Agent,
    served_dim: OnceLock<usize>,
    limiter: Limiter,
    requests: AtomicUsize,
}

impl RemoteRespondent {
    pub fn new(cfg: RemoteEndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            limiter: Limiter::new(cfg.max_in_flight),
            cfg,
            agent,
            served_dim: OnceLock::new(),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &RemoteEndpointConfig {
        &self.cfg
    }

    /// Total HTTP requests issued by this client.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn with_retries<T>(&self, what: &str, mut attempt: impl FnMut() -> Attempt<T>) -> Result<T, RespondentError> {
        let mut last = String::new();
        for n in 0..=self.cfg.max_retries {
            if n > 0 {
                let wait = self.cfg.backoff(n - 1);
                debug!("{what}: retry {n}/{} after {wait:?}: {last}", self.cfg.max_retries);
                thread::sleep(wait);
            }
            let _permit = self.limiter.acquire();
            self.requests.fetch_add(1, Ordering::Relaxed);
            match attempt() {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        warn!("{what}: giving up after {} attempts: {last}", self.cfg.max_retries + 1);
        Err(RespondentError::Transport {
            attempts: self.cfg.max_retries + 1,
            message: last,
        })
    }

    fn classify<T: serde::de::DeserializeOwned>(
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Attempt<T> {
        let mut resp = match result {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return match resp.body_mut().read_json::<T>() {
                Ok(body) => Attempt::Done(body),
                Err(ureq::Error::Json(e)) => Attempt::Fail(RespondentError::Protocol(e.to_string())),
                Err(e) => Attempt::Retry(e.to_string()),
            };
        }
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&body)
            .map(|b| b.error)
            .unwrap_or(body);
        if status == 429 || status >= 500 {
            Attempt::Retry(format!("HTTP {status}: {message}"))
        } else {
            Attempt::Fail(RespondentError::HttpStatus { status, message })
        }
    }

    fn authorize<B>(&self, req: ureq::RequestBuilder<B>) -> ureq::RequestBuilder<B> {
        match &self.cfg.auth_token {
            Some(token) => req.header("Authorization", format!("Bearer {}", token.expose())),
            None => req,
        }
    }

    /// Queries the served model's embedding width.
    pub fn model_info(&self) -> Result<ModelInfo, RespondentError> {
        let url = self.cfg.url("/v1/model-info");
        self.with_retries("model-info", || {
            Self::classify(self.authorize(self.agent.get(&url)).call())
        })
    }

    fn served_dim(&self) -> Result<usize, RespondentError> {
        if let Some(&d) = self.served_dim.get() {
            return Ok(d);
        }
        let info = self.model_info()?;
        Ok(*self.served_dim.get_or_init(|| info.embed_dim))
    }

    /// Sends one completion request and returns the generated text.
    pub fn complete(
        &self,
        v: &SoftPrompt,
        instruction: &InstructionPrompt,
        question: &str,
    ) -> Result<String, RespondentError> {
        if !v.is_empty() && !self.cfg.skip_handshake {
            let served = self.served_dim()?;
            if served != v.embed_dim() {
                return Err(RespondentError::DimMismatch {
                    served,
                    prompt: v.embed_dim(),
                });
            }
        }
        let body = CompletionRequest {
            model: &self.cfg.model_name,
            virtual_tokens: v.rows().collect(),
            instruction: &instruction.system_text,
            question,
            max_new_tokens: self.cfg.max_new_tokens,
            temperature: self.cfg.temperature,
        };
        let url = self.cfg.url("/v1/embedded-completion");
        self.with_retries("embedded-completion", || {
            let req = self.authorize(self.agent.post(&url));
            Self::classify::<CompletionResponse>(req.send_json(&body)).map(|r| r.text)
        })
    }

    pub fn remote_answer(
        &self,
        v: &SoftPrompt,
        instruction: &InstructionPrompt,
        question: &SurveyQuestion,
    ) -> Result<f64, RespondentError> {
        let text = self.complete(v, instruction, &question.text)?;
        match parse_numeric_answer(&text) {
            ParsedAnswer::Digit(d) => Ok(f64::from(d)),
            ParsedAnswer::Unparseable => Err(RespondentError::UnparseableAnswer { text }),
        }
    }
}

impl<T> Attempt<T> {
    fn map<U>(self, f: impl FnOnce(T) -> U) -> Attempt<U> {
        match self {
            Attempt::Done(v) => Attempt::Done(f(v)),
            Attempt::Retry(m) => Attempt::Retry(m),
            Attempt::Fail(e) => Attempt::Fail(e),
        }
    }
}

impl Respondent for RemoteRespondent {
    fn answer(
        &self,
        prompt: &SoftPrompt,
        instruction: &InstructionPrompt,
        question: &SurveyQuestion,
    ) -> Result<f64, RespondentError> {
        self.remote_answer(prompt, instruction, question)
    }

    fn is_deterministic(&self) -> bool {
        self.cfg.temperature == 0.0
    }

    fn ping(&self) -> Result<(), RespondentError> {
        self.model_info().map(|_| ())
    }

    fn describe(&self) -> String {
        format!("remote({}, model={})", self.cfg.base_url, self.cfg.model_name)
    }
}
