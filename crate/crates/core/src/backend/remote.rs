use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, BackendMetrics, BufferedGenerator, Capabilities, GenerationBackend, MetricCounters,
    StepGenerator, StepInput,
};
use crate::trace::{Context, TokenSeq};

/// Overrides [`RemoteEndpoint::base_url`] when set.
pub const REMOTE_URL_ENV: &str = "ECOT_SCHED_REMOTE_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEndpoint {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
}

impl Default for RemoteEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            timeout_ms: 30_000,
            max_retries: 2,
            max_concurrency: 8,
        }
    }
}

impl RemoteEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(REMOTE_URL_ENV) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        self
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Token count reported by the server.
    pub tokens: usize,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    stream: bool,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    usage: Usage,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

#[derive(Deserialize)]
struct Usage {
    completion_tokens: usize,
}

#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(self: &Arc<Self>) -> Permit {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(Arc::clone(self))
    }
}

struct Permit(Arc<Semaphore>);

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Completions-style HTTP backend.
///
/// Each step request runs on its own thread (bounded by
/// `max_concurrency`); the returned generator blocks on the response the
/// first time it is polled, then replays the completion one token at a time.
/// Token ids come from a hashing tokenizer over whitespace-separated words,
/// padded or cut to the server-reported count.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: RemoteEndpoint,
    client: reqwest::blocking::Client,
    limiter: Arc<Semaphore>,
    counters: Arc<MetricCounters>,
}

impl RemoteBackend {
    pub fn new(endpoint: RemoteEndpoint) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms.max(1)))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            limiter: Arc::new(Semaphore::new(endpoint.max_concurrency)),
            endpoint,
            client,
            counters: Arc::new(MetricCounters::default()),
        })
    }

    pub fn endpoint(&self) -> &RemoteEndpoint {
        &self.endpoint
    }

    /// POSTs `{prompt, max_tokens, stream: false}` to `/v1/completions`,
    /// retrying 429, 5xx, timeouts and connection errors up to
    /// `max_retries` times with exponential backoff.
    pub fn remote_complete(&self, prompt: &str, max_tokens: usize) -> Result<Completion, BackendError> {
        if max_tokens == 0 {
            return Ok(Completion {
                text: String::new(),
                tokens: 0,
            });
        }
        let mut attempt = 0u32;
        loop {
            self.counters.request();
            match self.attempt(prompt, max_tokens) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_retryable() && attempt < self.endpoint.max_retries => {
                    self.counters.retry();
                    std::thread::sleep(backoff(attempt));
                    attempt += 1;
                }
                Err(e) => {
                    self.counters.failure();
                    return Err(if e.is_retryable() {
                        BackendError::RetriesExhausted {
                            endpoint: self.endpoint.base_url.clone(),
                            attempts: attempt + 1,
                            last: Box::new(e),
                        }
                    } else {
                        e
                    });
                }
            }
        }
    }

    fn attempt(&self, prompt: &str, max_tokens: usize) -> Result<Completion, BackendError> {
        let endpoint = &self.endpoint.base_url;
        let resp = self
            .client
            .post(self.endpoint.completions_url())
            .json(&CompletionRequest {
                prompt,
                max_tokens,
                stream: false,
            })
            .send()
            .map_err(|e| classify(endpoint, &e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status {
                endpoint: endpoint.clone(),
                status,
            });
        }
        let body: CompletionResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout {
                    endpoint: endpoint.clone(),
                }
            } else {
                BackendError::Malformed {
                    endpoint: endpoint.clone(),
                    message: e.to_string(),
                }
            }
        })?;
        let text = body
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::Malformed {
                endpoint: endpoint.clone(),
                message: "no choices".into(),
            })?;
        Ok(Completion {
            text,
            tokens: body.usage.completion_tokens,
        })
    }

    pub fn prompt_prefix(context: &Context) -> String {
        let digest = Sha256::digest(&context.observation);
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("Instruction: {}\nObservation: {hex}\n", context.instruction)
    }

    fn step_prompt(input: &StepInput<'_>) -> String {
        let mut prompt = Self::prompt_prefix(input.context);
        if !input.prefix.is_empty() {
            let ids: Vec<String> = input.prefix.as_slice().iter().map(u32::to_string).collect();
            prompt.push_str("Reasoning: ");
            prompt.push_str(&ids.join(" "));
            prompt.push('\n');
        }
        prompt.push_str(&input.step.name.to_uppercase());
        prompt.push(':');
        prompt
    }
}

fn classify(endpoint: &str, e: &reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout {
            endpoint: endpoint.to_owned(),
        }
    } else {
        BackendError::Connection {
            endpoint: endpoint.to_owned(),
            message: e.to_string(),
        }
    }
}

fn backoff(attempt: u32) -> Duration {
    Duration::from_millis((5u64 << attempt.min(6)).min(200))
}

/// Word-hashing tokenizer producing exactly `count` ids.
pub(crate) fn tokenize(text: &str, count: usize) -> TokenSeq {
    let words: Vec<&str> = text.split_whitespace().collect();
    TokenSeq::new(
        (0..count)
            .map(|k| {
                let mut h = Sha256::new();
                h.update((k as u64).to_le_bytes());
                h.update(words.get(k).copied().unwrap_or("").as_bytes());
                let out = h.finalize();
                u32::from_le_bytes(out[..4].try_into().expect("4 bytes"))
            })
            .collect(),
    )
}

struct RemoteGenerator {
    pending: Option<JoinHandle<Result<Completion, BackendError>>>,
    budget: usize,
    ready: Option<BufferedGenerator>,
}

impl RemoteGenerator {
    fn resolve(&mut self) -> Result<&mut BufferedGenerator, BackendError> {
        if let Some(handle) = self.pending.take() {
            let completion = handle
                .join()
                .map_err(|_| BackendError::Config("remote worker panicked".into()))??;
            let tokens = tokenize(&completion.text, completion.tokens);
            self.ready = Some(BufferedGenerator::new(tokens.0, self.budget));
        }
        self.ready.as_mut().ok_or(BackendError::Exhausted)
    }
}

impl StepGenerator for RemoteGenerator {
    fn is_finished(&mut self) -> Result<bool, BackendError> {
        self.resolve()?.is_finished()
    }

    fn next_token(&mut self) -> Result<u32, BackendError> {
        self.resolve()?.next_token()
    }

    fn truncated(&self) -> bool {
        self.ready.as_ref().is_some_and(StepGenerator::truncated)
    }
}

impl GenerationBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.endpoint.base_url
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: false,
            supports_prefix_conditioning: true,
        }
    }

    /// The encoding is the tokenized prompt prefix sent ahead of every step.
    fn encode(&self, instruction: &str, observation: &[u8]) -> Result<Context, BackendError> {
        let mut ctx = Context::hashed(instruction, observation);
        let prefix = Self::prompt_prefix(&ctx);
        ctx.encoded = tokenize(&prefix, prefix.split_whitespace().count());
        Ok(ctx)
    }

    fn begin_step(&self, input: &StepInput<'_>) -> Result<Box<dyn StepGenerator>, BackendError> {
        let prompt = Self::step_prompt(input);
        let budget = input.step.max_tokens;
        let this = self.clone();
        let pending = std::thread::spawn(move || {
            let _permit = this.limiter.acquire();
            this.remote_complete(&prompt, budget)
        });
        Ok(Box::new(RemoteGenerator {
            pending: Some(pending),
            budget,
            ready: None,
        }))
    }

    fn metrics(&self) -> BackendMetrics {
        self.counters.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_is_exact_length() {
        assert_eq!(tokenize("a b c", 5).len(), 5);
        assert_eq!(tokenize("a b c", 2).len(), 2);
        assert_eq!(tokenize("a b", 2), tokenize("a b", 2));
        assert_ne!(tokenize("a b", 2), tokenize("a c", 2));
    }

    #[test]
    fn url_joins_cleanly() {
        assert_eq!(RemoteEndpoint::new("http://h:1/").completions_url(), "http://h:1/v1/completions");
    }

    #[test]
    fn backoff_is_capped() {
        assert_eq!(backoff(0), Duration::from_millis(5));
        assert_eq!(backoff(10), Duration::from_millis(200));
    }
}
