//! Language-model access: prompt templates, a retrying client over a
//! pluggable backend, and the line grammar used for responses.

mod http;
mod mock;
mod parse;
mod prompt;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::HttpBackend;
pub use mock::{KnowledgeEntry, KnowledgeTable, MockBackend, MockOracleConfig};
pub use parse::{
    parse_chains, parse_fill, parse_items, render_chain, render_tokens, ChainToken, ParseOutcome,
    ParsedChain,
};
pub use prompt::{
    build_prompt, ChainView, ItemView, PayloadFields, Prompt, TaskKind, MASK_TOKEN, TEMPLATE_VERSION,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub max_parallel: usize,
    pub api_key_env: String,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: "https://api.openai.com".to_string(),
            model: "gpt-4".to_string(),
            temperature: 0.0,
            max_retries: 3,
            timeout_secs: 60.0,
            max_parallel: 4,
            api_key_env: "LLMRG_API_KEY".to_string(),
            backoff_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::BackendConfig("temperature must be >= 0".into()));
        }
        if self.max_parallel < 1 {
            return Err(Error::BackendConfig("max_parallel must be >= 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::BackendConfig("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: rate limits, 5xx, timeouts, connection errors.
    Transient(String),
    /// Not retried: other 4xx responses.
    Permanent { status: u16, message: String },
}

pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> std::result::Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub text: String,
    pub attempts: u32,
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().expect("semaphore lock");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore wait");
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Retrying front end to a backend. Counts one access per logical completion
/// and every transport attempt separately.
pub struct LlmClient {
    backend: Box<dyn Backend>,
    max_retries: u32,
    backoff: Duration,
    gate: Semaphore,
    accesses: AtomicU64,
    attempts: AtomicU64,
}

impl LlmClient {
    pub fn new(backend: Box<dyn Backend>, config: &BackendConfig) -> Self {
        LlmClient {
            backend,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.backoff_ms),
            gate: Semaphore::new(config.max_parallel.max(1)),
            accesses: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        }
    }

    /// Builds the backend named by `config`. The mock needs its oracle config.
    pub fn from_config(config: &BackendConfig, mock: Option<MockOracleConfig>) -> Result<Self> {
        config.validate()?;
        let backend: Box<dyn Backend> = match config.kind {
            BackendKind::Mock => {
                let oracle = mock.ok_or_else(|| {
                    Error::BackendConfig("mock backend requires an oracle config".into())
                })?;
                Box::new(MockBackend::new(oracle)?)
            }
            BackendKind::Http => Box::new(HttpBackend::new(config)?),
        };
        Ok(Self::new(backend, config))
    }

    pub fn complete(&self, prompt: &Prompt) -> Result<RawResponse> {
        let _permit = self.gate.acquire();
        self.accesses.fetch_add(1, Ordering::SeqCst);
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(prompt) {
                Ok(text) => {
                    return Ok(RawResponse {
                        text,
                        attempts: attempt + 1,
                    })
                }
                Err(BackendError::Permanent { status, message }) => {
                    return Err(Error::BackendRejected { status, message })
                }
                Err(BackendError::Transient(msg)) => {
                    log::debug!("transient backend failure (attempt {}): {msg}", attempt + 1);
                    last = msg;
                    if attempt < self.max_retries {
                        std::thread::sleep(self.backoff.saturating_mul(1 << attempt.min(16)));
                    }
                }
            }
        }
        Err(Error::BackendExhausted {
            attempts: self.max_retries + 1,
            message: last,
        })
    }

    /// Logical completions that reached the backend.
    pub fn access_count(&self) -> u64 {
        self.accesses.load(Ordering::SeqCst)
    }

    /// Transport attempts including retries.
    pub fn attempt_count(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }
}
