//! Text generation and embedding backends.
//!
//! [`Generator`] and [`Embedder`] are the only surfaces the scheduler sees.
//! Two implementations ship: [`http::HttpBackend`] for OpenAI-compatible
//! servers and [`mock::MockBackend`], which is bitwise deterministic and
//! instrumented for tests.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod http;
pub mod mock;

pub use http::{HttpBackend, HttpConfig, RetryPolicy};
pub use mock::{mock_embed, mock_generate_text, MockBackend};

/// Upper bound on `n_samples` per request unless a backend overrides it.
pub const DEFAULT_SAMPLE_CAP: u32 = 64;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("server returned status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } | BackendError::Timeout { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            BackendError::Transport { attempts, .. }
            | BackendError::Timeout { attempts }
            | BackendError::Status { attempts, .. } => *attempts,
            _ => 1,
        }
    }

    pub(crate) fn with_attempts(self, n: u32) -> Self {
        match self {
            BackendError::Transport { message, .. } => BackendError::Transport { attempts: n, message },
            BackendError::Timeout { .. } => BackendError::Timeout { attempts: n },
            BackendError::Status { status, body, .. } => BackendError::Status {
                status,
                body,
                attempts: n,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub n_samples: u32,
    pub stop: Vec<String>,
    pub request_seed: u64,
    /// Sample index of the first completion; completions are numbered
    /// `first_sample_index..first_sample_index + n_samples`.
    #[serde(default)]
    pub first_sample_index: u32,
}

impl GenerationRequest {
    pub fn validate(&self, sample_cap: u32) -> Result<(), BackendError> {
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.n_samples == 0 || self.n_samples > sample_cap {
            return Err(BackendError::InvalidRequest(format!(
                "n_samples {} outside 1..={sample_cap}",
                self.n_samples
            )));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

impl FinishReason {
    /// Map an OpenAI-style `finish_reason` string.
    pub fn from_api(reason: Option<&str>) -> Self {
        match reason {
            Some("stop") | Some("eos") | Some("stop_sequence") => FinishReason::Stop,
            Some("length") | Some("max_tokens") => FinishReason::Length,
            _ => FinishReason::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub completions: Vec<Completion>,
    pub latency: Duration,
}

/// A dense embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::Decode("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Decode("non-finite embedding entry".into()));
        }
        Ok(EmbeddingVector(values))
    }

    /// The unit basis vector `e_index`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        EmbeddingVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = BackendError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Produces completions for pre-rendered prompts.
pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

/// Maps texts to vectors of one uniform dimension.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

/// Check a batch of embeddings for uniform dimension.
pub fn check_uniform_dim(vectors: &[EmbeddingVector]) -> Result<(), BackendError> {
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
            return Err(BackendError::DimensionMismatch {
                expected: first.dim(),
                got: bad.dim(),
            });
        }
    }
    Ok(())
}

/// The generator/embedder pair a run talks to.
#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn Generator>,
    pub embedder: Arc<dyn Embedder>,
}

impl Backends {
    pub fn new(generator: Arc<dyn Generator>, embedder: Arc<dyn Embedder>) -> Self {
        Backends { generator, embedder }
    }

    /// Use one object for both roles.
    pub fn shared<B: Generator + Embedder + 'static>(backend: Arc<B>) -> Self {
        Backends {
            generator: backend.clone(),
            embedder: backend,
        }
    }
}
