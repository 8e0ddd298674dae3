//! OpenAI-compatible HTTP backend.
//!
//! Generation uses the legacy `/completions` endpoint in prompt mode, since
//! prompts arrive fully rendered. Embeddings use `/embeddings`.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{
    check_uniform_dim, BackendError, Completion, Embedder, EmbeddingVector, FinishReason,
    GenerationRequest, GenerationResult, Generator, DEFAULT_SAMPLE_CAP,
};

pub const ENV_API_BASE: &str = "TG_API_BASE";
pub const ENV_API_KEY: &str = "TG_API_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Bounded exponential backoff: `base * factor^k` before retry `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry as i32))
    }

    /// Run `op` until it succeeds, fails non-retryably, or retries run out.
    /// The returned error carries the total attempt count.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    let delay = self.delay(attempt - 1);
                    warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(e) => return Err(e.with_attempts(attempt)),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL including any version prefix, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub embedding_model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Use the API's `n` parameter; otherwise issue one call per sample.
    pub native_n: bool,
    /// Forward `request_seed` as the `seed` field.
    pub send_seed: bool,
    pub sample_cap: u32,
    /// Embedding width used when a batch holds only blank texts and no
    /// width has been observed yet.
    pub embedding_dim: Option<usize>,
}

impl HttpConfig {
    pub fn new(base_url: &str, api_key: &str, model: &str) -> Self {
        HttpConfig {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            model: model.to_string(),
            embedding_model: model.to_string(),
            timeout: DEFAULT_TIMEOUT,
            retry: RetryPolicy::default(),
            native_n: true,
            send_seed: true,
            sample_cap: DEFAULT_SAMPLE_CAP,
            embedding_dim: None,
        }
    }

    /// Read `TG_API_BASE` (falling back to `default_base`) and `TG_API_KEY`.
    pub fn from_env(default_base: Option<&str>, model: &str) -> Result<Self, BackendError> {
        let base = std::env::var(ENV_API_BASE)
            .ok()
            .or_else(|| default_base.map(str::to_string))
            .ok_or(BackendError::MissingEnv(ENV_API_BASE))?;
        let key = std::env::var(ENV_API_KEY).map_err(|_| BackendError::MissingEnv(ENV_API_KEY))?;
        Ok(HttpConfig::new(&base, &key, model))
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    n: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    index: u32,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Serialize)]
struct EmbeddingBody<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: usize,
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    id: String,
    observed_dim: AtomicUsize,
    requests_sent: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let id = format!("http:{}", config.model);
        Ok(HttpBackend {
            observed_dim: AtomicUsize::new(config.embedding_dim.unwrap_or(0)),
            config,
            client,
            id,
            requests_sent: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// HTTP requests issued, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = format!("{}/{}", self.config.base_url, path);
        self.config.retry.run(|| {
            self.requests_sent.fetch_add(1, Ordering::Relaxed);
            let response = self
                .client
                .post(&url)
                .bearer_auth(&self.config.api_key)
                .json(body)
                .send()
                .map_err(map_reqwest)?;
            let status = response.status();
            let text = response.text().map_err(map_reqwest)?;
            if !status.is_success() {
                return Err(BackendError::Status {
                    status: status.as_u16(),
                    body: text,
                    attempts: 1,
                });
            }
            serde_json::from_str(&text).map_err(|e| BackendError::Decode(format!("{e}: {text}")))
        })
    }

    fn complete(&self, request: &GenerationRequest, n: u32, seed: u64) -> Result<Vec<Completion>, BackendError> {
        let body = CompletionBody {
            model: &self.config.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            n,
            stop: &request.stop,
            seed: self.config.send_seed.then_some(seed),
        };
        let mut response: CompletionResponse = self.post("completions", &body)?;
        if response.choices.len() != n as usize {
            return Err(BackendError::Decode(format!(
                "expected {n} choices, got {}",
                response.choices.len()
            )));
        }
        response.choices.sort_by_key(|c| c.index);
        Ok(response
            .choices
            .into_iter()
            .map(|c| Completion {
                text: c.text,
                finish_reason: FinishReason::from_api(c.finish_reason.as_deref()),
            })
            .collect())
    }
}

fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout { attempts: 1 }
    } else {
        BackendError::Transport {
            attempts: 1,
            message: e.to_string(),
        }
    }
}

impl Generator for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate(self.config.sample_cap)?;
        let started = Instant::now();
        let completions = if self.config.native_n {
            // Offset so a regeneration round does not replay the first.
            let seed = request.request_seed.wrapping_add(request.first_sample_index as u64);
            self.complete(request, request.n_samples, seed)?
        } else {
            let mut all = Vec::with_capacity(request.n_samples as usize);
            for i in 0..request.n_samples {
                let seed = request
                    .request_seed
                    .wrapping_add((request.first_sample_index + i) as u64);
                all.extend(self.complete(request, 1, seed)?);
            }
            all
        };
        debug!(
            "{} completions in {:?} ({} prompt bytes)",
            completions.len(),
            started.elapsed(),
            request.prompt.len()
        );
        Ok(GenerationResult {
            completions,
            latency: started.elapsed(),
        })
    }
}

impl Embedder for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("no texts to embed".into()));
        }
        let live: Vec<usize> = (0..texts.len()).filter(|&i| !texts[i].trim().is_empty()).collect();
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        if !live.is_empty() {
            let body = EmbeddingBody {
                model: &self.config.embedding_model,
                input: live.iter().map(|&i| texts[i].as_str()).collect(),
            };
            let mut response: EmbeddingResponse = self.post("embeddings", &body)?;
            if response.data.len() != live.len() {
                return Err(BackendError::Decode(format!(
                    "expected {} embeddings, got {}",
                    live.len(),
                    response.data.len()
                )));
            }
            response.data.sort_by_key(|d| d.index);
            let vectors = response
                .data
                .into_iter()
                .map(|d| EmbeddingVector::new(d.embedding))
                .collect::<Result<Vec<_>, _>>()?;
            check_uniform_dim(&vectors)?;
            let dim = vectors[0].dim();
            let known = self.observed_dim.load(Ordering::Relaxed);
            if known != 0 && known != dim {
                return Err(BackendError::DimensionMismatch { expected: known, got: dim });
            }
            self.observed_dim.store(dim, Ordering::Relaxed);
            for (slot, v) in live.iter().zip(vectors) {
                out[*slot] = Some(v);
            }
        }
        let dim = self.observed_dim.load(Ordering::Relaxed);
        if dim == 0 {
            return Err(BackendError::InvalidRequest(
                "only blank texts and embedding width unknown".into(),
            ));
        }
        Ok(out
            .into_iter()
            .map(|v| v.unwrap_or_else(|| EmbeddingVector::basis(dim, 0)))
            .collect())
    }
}
