use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Completion, LanguageModel, LlmError};

/// Environment variable that overrides the configured API key.
pub const API_KEY_ENV: &str = "CRS_API_KEY";

/// Exponential backoff with multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackoffPolicy {
    pub base_ms: u64,
    pub factor: f64,
    /// Relative jitter; 0.2 draws each delay from ±20% of its nominal value.
    pub jitter: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            base_ms: 500,
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl BackoffPolicy {
    /// Delay before retry `retry` (1-based) given a jitter draw in [-1, 1],
    /// never shorter than `previous`.
    pub fn delay(&self, retry: u32, draw: f64, previous: Duration) -> Duration {
        let nominal = self.base_ms as f64 * self.factor.powi(retry.saturating_sub(1) as i32);
        let ms = (nominal * (1.0 + self.jitter * draw.clamp(-1.0, 1.0))).max(0.0);
        Duration::from_secs_f64(ms / 1000.0).max(previous)
    }

    /// The delays preceding each of `retries` retries.
    pub fn schedule<R: Rng>(&self, retries: u32, rng: &mut R) -> Vec<Duration> {
        let mut prev = Duration::ZERO;
        (1..=retries)
            .map(|k| {
                prev = self.delay(k, rng.random_range(-1.0..=1.0), prev);
                prev
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub backoff: BackoffPolicy,
    /// Upper bound on concurrent requests through one client.
    pub max_in_flight: usize,
}

impl Default for ModelEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "gpt-3.5-turbo-1106".into(),
            api_key: None,
            timeout_ms: 60_000,
            max_retries: 3,
            temperature: 0.0,
            seed: None,
            backoff: BackoffPolicy::default(),
            max_in_flight: 4,
        }
    }
}

impl ModelEndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_ms == 0 {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be positive".into()));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| LlmError::Config(format!("base_url {:?}: {e}", self.base_url)))?;
        Ok(())
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(LlmError),
}

/// Blocking chat-completions client. The whole prompt is sent as a single
/// user message.
pub struct HttpModel {
    config: ModelEndpointConfig,
    api_key: Option<String>,
    client: Client,
    in_flight: Semaphore,
}

impl HttpModel {
    pub fn new(config: ModelEndpointConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .or_else(|| config.api_key.clone());
        let client = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            in_flight: Semaphore::new(config.max_in_flight),
            config,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &ModelEndpointConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> Result<String, AttemptError> {
        let mut req = self.client.post(self.config.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("status {status}")));
        }
        let text = resp
            .text()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if !status.is_success() {
            return Err(AttemptError::Fatal(LlmError::Rejected {
                status: status.as_u16(),
                body: text,
            }));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(LlmError::Malformed(e.to_string())))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                AttemptError::Fatal(LlmError::Malformed(
                    "missing choices[0].message.content".into(),
                ))
            })
    }
}

impl LanguageModel for HttpModel {
    fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        if let Some(seed) = self.config.seed {
            body["seed"] = json!(seed);
        }

        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let total = self.config.max_retries + 1;
        let mut prev_delay = Duration::ZERO;
        let mut last_error = String::new();
        for attempt in 1..=total {
            match self.attempt(&body) {
                Ok(text) if text.trim().is_empty() => return Err(LlmError::EmptyCompletion),
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        latency: started.elapsed(),
                        attempt,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => last_error = msg,
            }
            if attempt < total {
                let draw = rand::rng().random_range(-1.0..=1.0);
                prev_delay = self.config.backoff.delay(attempt, draw, prev_delay);
                std::thread::sleep(prev_delay);
            }
        }
        Err(LlmError::Transport {
            attempts: total,
            message: last_error,
        })
    }

    fn name(&self) -> &str {
        &self.config.model_name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backoff_schedule_is_non_decreasing() {
        let policy = BackoffPolicy::default();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = policy.schedule(8, &mut rng);
            assert!(s.windows(2).all(|w| w[0] <= w[1]), "{s:?}");
            assert!(s[0] >= Duration::from_millis(400) && s[0] <= Duration::from_millis(600));
        }
    }

    #[test]
    fn aggressive_jitter_still_monotone() {
        let policy = BackoffPolicy {
            base_ms: 100,
            factor: 1.0,
            jitter: 0.9,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = policy.schedule(20, &mut rng);
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn config_validation() {
        let mut c = ModelEndpointConfig::default();
        assert!(c.validate().is_ok());
        c.timeout_ms = 0;
        assert!(c.validate().is_err());
        let c = ModelEndpointConfig {
            base_url: "not a url".into(),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
