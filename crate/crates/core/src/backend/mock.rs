//! Deterministic in-process backend.
//!
//! Generated text is a pure function of `(request_seed, prompt, sample_index,
//! max_tokens)`, and embeddings are hashed bag-of-words counts, so an entire
//! tree is reproducible from its config alone. The backend also meters
//! concurrency and can log call order for scheduling tests.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    BackendError, Completion, Embedder, EmbeddingVector, FinishReason, GenerationRequest,
    GenerationResult, Generator, DEFAULT_SAMPLE_CAP,
};
use crate::hash::{fnv1a64, KeyHasher};

pub const DEFAULT_MOCK_DIM: usize = 16;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "da", "fe", "gu", "ho", "ji", "po", "ze", "wa",
];
const FILLER: [&str; 8] = ["the", "of", "and", "to", "in", "is", "that", "with"];
const TOPICS: u64 = 16;
const WORDS_PER_TOPIC: u64 = 16;

fn topic_word(topic: u64, slot: u64) -> String {
    let i = (topic * WORDS_PER_TOPIC + slot) as usize;
    format!("{}{}{}", SYLLABLES[i % 16], SYLLABLES[(i / 16) % 16], SYLLABLES[(i * 7 + 3) % 16])
}

/// Deterministic pseudo-text for one sample.
///
/// The word count is `ceil(max_tokens / 2)` (at least one). Each text leans
/// on one of sixteen topic vocabularies, so siblings are sometimes close and
/// sometimes far apart under the hashed embedder.
pub fn mock_generate_text(seed: u64, prompt: &str, sample_index: u32, max_tokens: u32) -> String {
    let key = KeyHasher::new()
        .u64(seed)
        .str(prompt)
        .u64(sample_index as u64)
        .finish();
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let words = max_tokens.div_ceil(2).max(1);
    let topic = rng.random_range(0..TOPICS);
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push(' ');
        }
        if rng.random_bool(0.8) {
            out.push_str(&topic_word(topic, rng.random_range(0..WORDS_PER_TOPIC)));
        } else {
            out.push_str(FILLER[rng.random_range(0..FILLER.len())]);
        }
    }
    out
}

/// Hashed bag-of-words embedding: whitespace tokens, lowercased, counted into
/// `FNV-1a-64(token) mod dim` buckets, then L2-normalized. Blank text maps to
/// the basis vector `e_0`.
pub fn mock_embed(text: &str, dim: usize) -> EmbeddingVector {
    let mut counts = vec![0.0f64; dim];
    let mut any = false;
    for token in text.split_whitespace() {
        let bucket = (fnv1a64(token.to_lowercase().as_bytes()) % dim as u64) as usize;
        counts[bucket] += 1.0;
        any = true;
    }
    if !any {
        return EmbeddingVector::basis(dim, 0);
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    for c in &mut counts {
        *c /= norm;
    }
    EmbeddingVector::new(counts).expect("finite by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockCall {
    Generate { max_tokens: u32, n_samples: u32 },
    Embed { batch: usize },
}

/// One logged call with its position on the shared event clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockEvent {
    pub seq: u64,
    pub call: MockCall,
}

type CompletionHook = dyn Fn(&GenerationRequest, u32, String) -> String + Send + Sync;
type FailHook = dyn Fn(&GenerationRequest) -> bool + Send + Sync;

#[derive(Default)]
struct Meter {
    generate_calls: AtomicU64,
    embed_calls: AtomicU64,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

struct InFlight<'a>(&'a Meter);

impl<'a> InFlight<'a> {
    fn enter(meter: &'a Meter) -> Self {
        let now = meter.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        meter.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(meter)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Deterministic generator + embedder.
pub struct MockBackend {
    id: String,
    dim: usize,
    latency: Duration,
    jitter: Duration,
    completion_hook: Option<Arc<CompletionHook>>,
    fail_hook: Option<Arc<FailHook>>,
    meter: Meter,
    clock: Option<Arc<AtomicU64>>,
    events: Mutex<Vec<MockEvent>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend {
            id: "mock".to_string(),
            dim: DEFAULT_MOCK_DIM,
            latency: Duration::ZERO,
            jitter: Duration::ZERO,
            completion_hook: None,
            fail_hook: None,
            meter: Meter::default(),
            clock: None,
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        self.dim = dim;
        self
    }

    /// Sleep this long inside every generate call.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Add up to `jitter` extra sleep per generate call, fixed per request.
    pub fn with_jitter(mut self, jitter: Duration) -> Self {
        self.jitter = jitter;
        self
    }

    /// Rewrite completions: `hook(request, sample_index, default_text)`.
    pub fn with_completion_hook(
        mut self,
        hook: impl Fn(&GenerationRequest, u32, String) -> String + Send + Sync + 'static,
    ) -> Self {
        self.completion_hook = Some(Arc::new(hook));
        self
    }

    /// Every sample of a matching request repeats sample 0's text.
    pub fn repeating_when(self, pred: impl Fn(&GenerationRequest) -> bool + Send + Sync + 'static) -> Self {
        self.with_completion_hook(move |req, idx, text| {
            if pred(req) && idx != 0 {
                mock_generate_text(req.request_seed, &req.prompt, 0, req.max_tokens)
            } else {
                text
            }
        })
    }

    /// Matching generate requests fail with a retryable transport error.
    pub fn failing_when(mut self, pred: impl Fn(&GenerationRequest) -> bool + Send + Sync + 'static) -> Self {
        self.fail_hook = Some(Arc::new(pred));
        self
    }

    /// Log every call, stamped from `clock`.
    pub fn with_event_clock(mut self, clock: Arc<AtomicU64>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generate_calls(&self) -> u64 {
        self.meter.generate_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> u64 {
        self.meter.embed_calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous calls observed so far.
    pub fn max_in_flight(&self) -> usize {
        self.meter.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn events(&self) -> Vec<MockEvent> {
        self.events.lock().expect("event log poisoned").clone()
    }

    fn log(&self, call: MockCall) {
        if let Some(clock) = &self.clock {
            let seq = clock.fetch_add(1, Ordering::SeqCst);
            self.events
                .lock()
                .expect("event log poisoned")
                .push(MockEvent { seq, call });
        }
    }
}

impl Generator for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let _guard = InFlight::enter(&self.meter);
        let started = Instant::now();
        self.meter.generate_calls.fetch_add(1, Ordering::SeqCst);
        self.log(MockCall::Generate {
            max_tokens: request.max_tokens,
            n_samples: request.n_samples,
        });
        request.validate(DEFAULT_SAMPLE_CAP)?;

        let mut sleep = self.latency;
        if !self.jitter.is_zero() {
            let key = KeyHasher::new().u64(request.request_seed).str(&request.prompt).finish();
            let frac = (key >> 11) as f64 / (1u64 << 53) as f64;
            sleep += self.jitter.mul_f64(frac);
        }
        if !sleep.is_zero() {
            std::thread::sleep(sleep);
        }
        if let Some(fail) = &self.fail_hook {
            if fail(request) {
                return Err(BackendError::Transport {
                    attempts: 1,
                    message: "injected failure".into(),
                });
            }
        }

        let completions = (0..request.n_samples)
            .map(|i| {
                let idx = request.first_sample_index + i;
                let mut text =
                    mock_generate_text(request.request_seed, &request.prompt, idx, request.max_tokens);
                if let Some(hook) = &self.completion_hook {
                    text = hook(request, idx, text);
                }
                Completion {
                    text,
                    finish_reason: FinishReason::Length,
                }
            })
            .collect();
        Ok(GenerationResult {
            completions,
            latency: started.elapsed(),
        })
    }
}

impl Embedder for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let _guard = InFlight::enter(&self.meter);
        self.meter.embed_calls.fetch_add(1, Ordering::SeqCst);
        self.log(MockCall::Embed { batch: texts.len() });
        Ok(texts.iter().map(|t| mock_embed(t, self.dim)).collect())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::dedup::cosine;

    /// Independent FNV-1a-64 for checking bucket assignments.
    fn fnv_oracle(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    fn request(n: u32) -> GenerationRequest {
        GenerationRequest {
            prompt: "P".into(),
            max_tokens: 16,
            temperature: 1.0,
            n_samples: n,
            stop: vec![],
            request_seed: 42,
            first_sample_index: 0,
        }
    }

    #[test]
    fn text_is_deterministic() {
        assert_eq!(mock_generate_text(7, "p", 3, 32), mock_generate_text(7, "p", 3, 32));
    }

    #[test]
    fn sample_index_changes_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let seed: u64 = rng.random();
            let prompt = format!("prompt {}", rng.random::<u32>());
            let idx: u32 = rng.random_range(0..1000);
            let a = mock_generate_text(seed, &prompt, idx, 24);
            let b = mock_generate_text(seed, &prompt, idx + 1, 24);
            assert_ne!(a, b, "collision for seed {seed} prompt {prompt:?} index {idx}");
        }
    }

    #[test]
    fn single_token_budget_yields_one_word() {
        let t = mock_generate_text(1, "p", 0, 1);
        assert!(!t.is_empty());
        assert_eq!(t.split_whitespace().count(), 1);
        assert_eq!(mock_generate_text(1, "p", 0, 64).split_whitespace().count(), 32);
    }

    #[test]
    fn generate_returns_n_samples() {
        let mock = MockBackend::new();
        let out = mock.generate(&request(4)).unwrap();
        assert_eq!(out.completions.len(), 4);
        let again = mock.generate(&request(4)).unwrap();
        assert_eq!(out.completions, again.completions);
        assert_eq!(mock.generate_calls(), 2);
    }

    #[test]
    fn first_sample_index_shifts_the_range() {
        let mock = MockBackend::new();
        let all = mock.generate(&request(4)).unwrap().completions;
        let mut tail = request(2);
        tail.first_sample_index = 2;
        assert_eq!(mock.generate(&tail).unwrap().completions, all[2..].to_vec());
    }

    #[test]
    fn repeating_mock_returns_identical_samples() {
        let mock = MockBackend::new().repeating_when(|_| true);
        let out = mock.generate(&request(3)).unwrap();
        assert!(out.completions.iter().all(|c| c.text == out.completions[0].text));
    }

    #[test]
    fn embed_counts_hashed_buckets() {
        let v = mock_embed("a a b", 16);
        let ba = (fnv_oracle(b"a") % 16) as usize;
        let bb = (fnv_oracle(b"b") % 16) as usize;
        let mut expected = [0.0; 16];
        expected[ba] += 2.0;
        expected[bb] += 1.0;
        let norm = (expected.iter().map(|x| x * x).sum::<f64>()).sqrt();
        for (got, want) in v.values().iter().zip(expected.iter().map(|x| x / norm)) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embed_lowercases_and_handles_blank() {
        assert_eq!(mock_embed("Hello World", 16), mock_embed("hello world", 16));
        assert_eq!(mock_embed("   ", 16), EmbeddingVector::basis(16, 0));
        assert_eq!(mock_embed("", 8).dim(), 8);
    }

    #[test]
    fn identical_texts_have_unit_cosine() {
        let a = mock_embed("the quick fox", 16);
        let b = mock_embed("the quick fox", 16);
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topics_give_varied_similarity() {
        // Siblings from one prompt should not all look alike.
        let texts: Vec<String> = (0..16).map(|i| mock_generate_text(5, "p", i, 40)).collect();
        let vecs: Vec<_> = texts.iter().map(|t| mock_embed(t, 16)).collect();
        let mut sims = HashSet::new();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                sims.insert((cosine(&vecs[i], &vecs[j]).unwrap() * 100.0) as i64);
            }
        }
        assert!(sims.len() > 10);
    }

    #[test]
    fn meter_tracks_concurrency() {
        let mock = Arc::new(MockBackend::new().with_latency(Duration::from_millis(20)));
        std::thread::scope(|s| {
            for _ in 0..3 {
                let m = mock.clone();
                s.spawn(move || m.generate(&request(1)).unwrap());
            }
        });
        assert!(mock.max_in_flight() >= 2);
        assert!(mock.max_in_flight() <= 3);
    }

    #[test]
    fn failing_hook_returns_retryable_error() {
        let mock = MockBackend::new().failing_when(|r| r.max_tokens == 16);
        let err = mock.generate(&request(1)).unwrap_err();
        assert!(err.is_retryable());
    }
}
