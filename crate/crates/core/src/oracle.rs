//! Reward oracles: anything that scores a complete grid for a prompt.
//!
//! Remote oracles speak a small JSON protocol:
//!
//! * `POST /score` with `{"prompt": "...", "images": ["<base64 png>", ...]}`
//!   answers `{"scores": [number, ...]}`, one finite score per image, in
//!   request order.
//! * `GET /health` answers `{"status": "ok", "model": "..."}`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::toy::{Codebook, Image, PromptSpec, SyntheticReward};

pub trait RewardOracle: Send + Sync {
    fn score(&self, grid: &TokenGrid, prompt: &PromptSpec) -> Result<f64>;

    /// How many `score` calls may run at once; `None` means unlimited.
    fn max_concurrency(&self) -> Option<usize> {
        None
    }

    fn name(&self) -> String;
}

/// The toy reward model, exact and freely concurrent.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticOracle {
    pub reward: SyntheticReward,
}

impl RewardOracle for SyntheticOracle {
    fn score(&self, grid: &TokenGrid, prompt: &PromptSpec) -> Result<f64> {
        self.reward.score(grid, prompt)
    }

    fn name(&self) -> String {
        "synthetic".into()
    }
}

/// Counts every call that reaches the wrapped oracle.
pub struct MeteredOracle<'a> {
    inner: &'a dyn RewardOracle,
    calls: AtomicU64,
}

impl<'a> MeteredOracle<'a> {
    pub fn new(inner: &'a dyn RewardOracle) -> Self {
        MeteredOracle { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl RewardOracle for MeteredOracle<'_> {
    fn score(&self, grid: &TokenGrid, prompt: &PromptSpec) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(grid, prompt)
    }

    fn max_concurrency(&self) -> Option<usize> {
        self.inner.max_concurrency()
    }

    fn name(&self) -> String {
        self.inner.name()
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    images: Vec<String>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<serde_json::Value>,
}

/// Server health as reported by `GET /health`.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
}

/// HTTP client for a reward server.
#[derive(Clone, Debug)]
pub struct RemoteClient {
    endpoint: String,
    timeout: Duration,
    retries: u32,
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteClient {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Extra attempts after the first on transport failures.
    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    pub fn health(&self) -> Result<Health> {
        let url = format!("{}/health", self.endpoint);
        let mut resp = self
            .agent()
            .get(&url)
            .call()
            .map_err(|e| Error::Transport(format!("GET {url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::Transport(format!("GET {url}: status {}", resp.status())));
        }
        resp.body_mut()
            .read_json::<Health>()
            .map_err(|e| Error::Protocol(format!("malformed health response: {e}")))
    }

    /// Scores a batch of images; the result is in request order.
    pub fn score_batch(&self, images: &[Image], prompt_text: &str) -> Result<Vec<f64>> {
        let engine = base64::engine::general_purpose::STANDARD;
        let encoded = images
            .iter()
            .map(|img| img.to_png().map(|png| engine.encode(png)))
            .collect::<Result<Vec<_>>>()?;
        let body = ScoreRequest { prompt: prompt_text, images: encoded };
        let url = format!("{}/score", self.endpoint);
        let agent = self.agent();

        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            let mut resp = match agent.post(&url).send_json(&body) {
                Ok(r) => r,
                Err(e) => {
                    last = format!("POST {url}: {e}");
                    continue;
                }
            };
            let status = resp.status();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| Error::Transport(format!("reading response from {url}: {e}")))?;
            if status.is_server_error() {
                last = format!("POST {url}: status {status}: {text}");
                continue;
            }
            if !status.is_success() {
                return Err(Error::Transport(format!("POST {url}: status {status}: {text}")));
            }
            let parsed: ScoreResponse = serde_json::from_str(&text)
                .map_err(|e| Error::Transport(format!("malformed response from {url}: {e}")))?;
            if parsed.scores.len() != images.len() {
                return Err(Error::Protocol(format!(
                    "sent {} images, received {} scores",
                    images.len(),
                    parsed.scores.len()
                )));
            }
            return parsed
                .scores
                .iter()
                .map(|v| match v.as_f64() {
                    Some(x) if x.is_finite() => Ok(x),
                    _ => Err(Error::Protocol(format!("score {v} is not a finite number"))),
                })
                .collect();
        }
        Err(Error::Transport(format!("{last} (after {} attempts)", self.retries + 1)))
    }
}

/// Scores one decoded image on a reward server.
pub fn remote_score(image: &Image, prompt_text: &str, endpoint: &str) -> Result<f64> {
    let scores = RemoteClient::new(endpoint).score_batch(std::slice::from_ref(image), prompt_text)?;
    Ok(scores[0])
}

/// Oracle backed by a reward server: grids are decoded to PNG first.
#[derive(Clone, Debug)]
pub struct RemoteOracle {
    pub client: RemoteClient,
    pub codebook: Codebook,
    pub concurrency: usize,
}

impl RemoteOracle {
    /// The text sent for a toy prompt.
    pub fn prompt_text(prompt: &PromptSpec) -> String {
        format!("prompt {}", prompt.class_id)
    }
}

impl RewardOracle for RemoteOracle {
    fn score(&self, grid: &TokenGrid, prompt: &PromptSpec) -> Result<f64> {
        let image = self.codebook.decode(grid)?;
        let scores = self.client.score_batch(&[image], &Self::prompt_text(prompt))?;
        Ok(scores[0])
    }

    fn max_concurrency(&self) -> Option<usize> {
        Some(self.concurrency.max(1))
    }

    fn name(&self) -> String {
        format!("remote:{}", self.client.endpoint())
    }
}
