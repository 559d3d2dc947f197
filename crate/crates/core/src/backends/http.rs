use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{Backend, BackendError, CompletionRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    /// Base URL (`http://host:port`, `.../v1`) or the full completions path.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored in configuration.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_secs: f64,
    pub backoff_cap_secs: f64,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000".into(),
            model: "default".into(),
            api_key_env: Some("TRIAD_API_KEY".into()),
            timeout_secs: 120.0,
            max_retries: 3,
            backoff_base_secs: 0.5,
            backoff_cap_secs: 8.0,
            max_in_flight: 8,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs > 0.0) {
            return Err(format!("timeout must be positive, got {}", self.timeout_secs));
        }
        if !(self.backoff_base_secs >= 0.0) || !(self.backoff_cap_secs >= 0.0) {
            return Err("backoff durations must be non-negative".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    /// Backoff before retry number `attempt` (0-based), without jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let secs = self.backoff_base_secs * 2f64.powi(attempt.min(30) as i32);
        Duration::from_secs_f64(secs.min(self.backoff_cap_secs))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    key: Option<ApiKey>,
    sleeper: Box<dyn Sleeper>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("key", &self.key)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Self::with_sleeper(config, Box::new(ThreadSleeper))
    }

    pub fn with_sleeper(config: BackendConfig, sleeper: Box<dyn Sleeper>) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::Transport)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty())
            .map(ApiKey);
        Ok(Self { config, client, key, sleeper })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<String, BackendError> {
        let mut builder = self.client.post(url).json(body);
        if let Some(key) = &self.key {
            builder = builder.bearer_auth(&key.0);
        }
        let resp = builder.send().map_err(|e| self.transport_error(e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::HttpStatus(status.as_u16()));
        }
        let value: Value = resp.json().map_err(|e| self.transport_error(e))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse("no choices[0].message.content".into()))
    }

    fn transport_error(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            return BackendError::Timeout;
        }
        let mut msg = e.without_url().to_string();
        if let Some(key) = &self.key {
            msg = msg.replace(&key.0, "<redacted>");
        }
        BackendError::Transport(msg)
    }
}

fn retryable(err: &BackendError) -> bool {
    match err {
        BackendError::Timeout | BackendError::Transport(_) => true,
        BackendError::HttpStatus(code) => *code == 429 || (500..600).contains(code),
        _ => false,
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let url = self.config.completions_url();
        let body = self.body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&url, &body) {
                Ok(text) => return Ok(text),
                Err(err) if retryable(&err) && attempt < self.config.max_retries => {
                    let base = self.config.backoff(attempt);
                    let jitter = rand::thread_rng().gen_range(0.5..=1.0);
                    self.sleeper.sleep(base.mul_f64(jitter));
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}
