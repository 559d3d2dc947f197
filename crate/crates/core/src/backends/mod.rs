//! Text-completion providers behind one blocking interface.
//!
//! - [`HttpBackend`]: chat-completion endpoint with retry and backoff.
//! - [`ScriptedBackend`]: canned replies matched by request tag.
//! - [`CassetteBackend`]: records live replies or replays them by request digest.

mod cassette;
mod http;
mod scripted;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt_kit::TemplateId;

pub use cassette::{entries_to_text, CassetteBackend, CassetteEntry, NoBackend};
pub use http::{BackendConfig, HttpBackend, Sleeper, ThreadSleeper};
pub use scripted::{Matcher, ScriptEntry, ScriptedBackend};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("script has no reply left for {0}")]
    ScriptExhausted(String),
    #[error("cassette has no recording for digest {0}")]
    CassetteMiss(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
}

/// Who issued a request and with which template.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestTag {
    pub question: String,
    /// 0 for the question-level agents (premise extraction, decomposition).
    pub agent: u32,
    pub round: u32,
    pub template: TemplateId,
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "question={} agent={} round={} template={}",
            self.question, self.agent, self.round, self.template
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub tag: RequestTag,
}

impl CompletionRequest {
    pub fn digest(&self) -> String {
        request_digest(self)
    }
}

/// SHA-256 over system text, user text, temperature, seed and tag.
///
/// Every field is length-prefixed so concatenations cannot collide.
pub fn request_digest(req: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    let mut put = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    put(req.system_text.as_bytes());
    put(req.user_text.as_bytes());
    put(&req.temperature.to_bits().to_le_bytes());
    match req.seed {
        Some(seed) => put(&seed.to_le_bytes()),
        None => put(b"none"),
    }
    put(req.tag.question.as_bytes());
    put(&req.tag.agent.to_le_bytes());
    put(&req.tag.round.to_le_bytes());
    put(req.tag.template.as_str().as_bytes());
    hex::encode(h.finalize())
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Wraps a backend and keeps every request it forwards.
pub struct RecordingBackend<B> {
    inner: B,
    requests: Mutex<Vec<CompletionRequest>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, requests: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().expect("poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().expect("poisoned").len()
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.requests.lock().expect("poisoned").push(request.clone());
        self.inner.complete(request)
    }
}
