//! Chat-completion-style HTTP client. The wire format is documented in
//! `docs/protocol.md`.

use super::{Capabilities, GenerationRequest, GenerationResponse, Policy, PolicyError, PolicyKind, Role};
use crate::rollout::Trajectory;
use crate::videorep::{Grain, ViewSpec};
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

pub const ENV_URL: &str = "TWG_ENDPOINT_URL";
pub const ENV_API_KEY: &str = "TWG_API_KEY";
pub const ENV_TIMEOUT: &str = "TWG_TIMEOUT_S";
pub const ENV_MAX_IN_FLIGHT: &str = "TWG_MAX_IN_FLIGHT";
pub const ENV_MODEL: &str = "TWG_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    /// Sent as a bearer token. Usually supplied through the environment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_s: f64,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    /// Ask the endpoint for per-token log-probabilities.
    pub request_logprobs: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            api_key: None,
            model: "default".into(),
            timeout_s: 120.0,
            max_in_flight: 8,
            max_attempts: 3,
            backoff_base_ms: 250,
            request_logprobs: true,
        }
    }
}

impl RemoteConfig {
    /// Overrides fields from `TWG_*` environment variables when set.
    pub fn apply_env(mut self) -> Result<Self, String> {
        self.apply_vars(|k| std::env::var(k).ok())?;
        Ok(self)
    }

    fn apply_vars(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), String> {
        if let Some(url) = get(ENV_URL) {
            self.url = url;
        }
        if let Some(key) = get(ENV_API_KEY) {
            self.api_key = Some(key);
        }
        if let Some(model) = get(ENV_MODEL) {
            self.model = model;
        }
        if let Some(t) = get(ENV_TIMEOUT) {
            self.timeout_s = t.parse().map_err(|_| format!("{ENV_TIMEOUT}: not a number: {t}"))?;
        }
        if let Some(n) = get(ENV_MAX_IN_FLIGHT) {
            self.max_in_flight = n.parse().map_err(|_| format!("{ENV_MAX_IN_FLIGHT}: not an integer: {n}"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.url.is_empty() {
            return Err("endpoint url is empty".into());
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("timeout_s must be > 0, got {}", self.timeout_s));
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be > 0".into());
        }
        if self.max_attempts == 0 {
            return Err("max_attempts must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub(crate) struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    top_k: u32,
    repetition_penalty: f64,
    max_tokens: u32,
    seed: u64,
    logprobs: bool,
}

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: Vec<WirePart<'a>>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart<'a> {
    Text { text: &'a str },
    Video { video: WireVideo<'a> },
}

#[derive(Debug, Serialize)]
struct WireVideo<'a> {
    uri: &'a str,
    grain: Grain,
    start_s: f64,
    end_s: f64,
    timestamps: &'a [f64],
    tokens_per_frame: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    frames: &'a [String],
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireReply,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireTokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct WireTokenLogprob {
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    completion_tokens: u32,
}

fn video_part<'a>(uri: &'a str, view: &'a ViewSpec) -> WirePart<'a> {
    WirePart::Video {
        video: WireVideo {
            uri,
            grain: view.grain,
            start_s: view.start_s,
            end_s: view.end_s,
            timestamps: &view.timestamps,
            tokens_per_frame: view.tokens_per_frame,
            frames: &view.frames,
        },
    }
}

/// Serializes a request into the documented wire body.
pub fn encode_request(config: &RemoteConfig, request: &GenerationRequest) -> String {
    let messages = request
        .messages
        .iter()
        .map(|m| {
            let mut content: Vec<WirePart<'_>> = m.views.iter().map(|v| video_part(&request.video_uri, v)).collect();
            content.push(WirePart::Text { text: &m.text });
            WireMessage {
                role: match m.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                },
                content,
            }
        })
        .collect();
    let body = WireRequest {
        model: &config.model,
        messages,
        temperature: request.sampling.temperature,
        top_p: request.sampling.top_p,
        top_k: request.sampling.top_k,
        repetition_penalty: request.sampling.repetition_penalty,
        max_tokens: request.sampling.max_new_tokens,
        seed: request.seed,
        logprobs: config.request_logprobs,
    };
    serde_json::to_string(&body).expect("wire request serializes")
}

/// Parses a response body. Log-probs are summed over the reported tokens.
pub fn decode_response(body: &str) -> Result<GenerationResponse, PolicyError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| PolicyError::Protocol(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| PolicyError::Protocol("no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let total_logprob = choice
        .logprobs
        .and_then(|l| l.content)
        .map(|tokens| tokens.iter().map(|t| t.logprob).sum());
    let token_count = wire
        .usage
        .map(|u| u.completion_tokens)
        .unwrap_or_else(|| super::approx_tokens(&text));
    Ok(GenerationResponse {
        text,
        total_logprob,
        token_count,
    })
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(PolicyError),
}

pub struct RemotePolicy {
    config: RemoteConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Result<Self, PolicyError> {
        config.validate().map_err(PolicyError::InvalidRequest)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight {
            count: Mutex::new(0),
            freed: Condvar::new(),
            cap: config.max_in_flight,
        };
        Ok(Self {
            config,
            agent,
            in_flight,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut req = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => Attempt::Done(text),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(PolicyError::Protocol(format!("HTTP {status}: {text}"))),
        }
    }
}

impl Policy for RemotePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Remote
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            reports_logprobs: self.config.request_logprobs,
            scores_trajectories: false,
        }
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, PolicyError> {
        if request.messages.is_empty() {
            return Err(PolicyError::InvalidRequest("empty context".into()));
        }
        let body = encode_request(&self.config, request);
        let _permit = self.in_flight.acquire();
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let wait = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body) {
                Attempt::Done(text) => return decode_response(&text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::debug!("attempt {} to {} failed: {msg}", attempt + 1, self.config.url);
                    last = msg;
                }
            }
        }
        Err(PolicyError::Transport {
            attempts: self.config.max_attempts,
            message: last,
        })
    }

    /// Sums the per-turn log-probs recorded at generation time; fails when
    /// any turn lacks one.
    fn score_trajectory(&self, trajectory: &Trajectory) -> Result<f64, PolicyError> {
        if !self.config.request_logprobs {
            return Err(PolicyError::Unsupported("endpoint does not report log-probs"));
        }
        trajectory
            .turns
            .iter()
            .map(|t| t.logprob.ok_or(PolicyError::Unsupported("turn without recorded log-prob")))
            .sum()
    }
}
