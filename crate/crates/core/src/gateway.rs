//! VLM gateway: an OpenAI-compatible chat-completions client and a
//! deterministic mock oracle that answers from ground truth.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine;
use log::{debug, warn};
use rand::RngExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{Answer, BBox};
use crate::prompting::{render_answer, Part, PromptBundle, Role};
use crate::rng::keyed_rng;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("unexpected response: {0}")]
    Response(String),
    #[error("bundle has no query image")]
    MissingQuery,
    #[error("mock oracle has no ground truth for {0}")]
    UnknownQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

fn default_model() -> String {
    "vip-llava-7b".into()
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    1
}
fn default_max_tokens() -> u32 {
    128
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_model")]
    pub model_name: String,
    /// Model used for the vanilla setting; falls back to `model_name`.
    #[serde(default)]
    pub base_model_name: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub request_parallelism: usize,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint_url: None,
            model_name: default_model(),
            base_model_name: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            request_parallelism: default_parallelism(),
            api_key_env: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            backoff_ms: default_backoff(),
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.backend == BackendKind::Remote && self.endpoint_url.as_deref().is_none_or(str::is_empty) {
            return Err(GatewayError::Config("remote backend needs endpoint_url".into()));
        }
        if self.request_parallelism < 1 {
            return Err(GatewayError::Config("request_parallelism must be >= 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(GatewayError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

/// What the mock answers before noise is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockResponse {
    #[default]
    GroundTruth,
    /// Every image gets a defect answer (the ground-truth box when there is one).
    AlwaysDefect,
    AlwaysNone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockOracleConfig {
    #[serde(default)]
    pub flip_probability: f64,
    #[serde(default)]
    pub bbox_jitter: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub respond: MockResponse,
}

impl Default for MockOracleConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.0,
            bbox_jitter: 0.0,
            seed: 0,
            respond: MockResponse::GroundTruth,
        }
    }
}

impl MockOracleConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(GatewayError::Config("flip_probability must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.bbox_jitter) {
            return Err(GatewayError::Config("bbox_jitter must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mock configuration plus the ground truth it answers from.
#[derive(Debug, Clone, Default)]
pub struct MockOracle {
    pub config: MockOracleConfig,
    pub ground_truth: HashMap<String, Answer>,
}

/// Box used when a flip invents a defect.
pub fn default_defect_box() -> BBox {
    BBox::new(0.25, 0.25, 0.75, 0.75).expect("valid default box")
}

fn jitter_axis(lo: f64, hi: f64, amount: f64, rng: &mut impl RngExt) -> (f64, f64) {
    let mut shift = |v: f64| {
        let j: f64 = rng.random_range(-amount..=amount);
        // snap to the rendering grid so parse(render) keeps the box valid
        ((v + j).clamp(0.0, 1.0) * 1000.0).round() / 1000.0
    };
    let (a, b) = (shift(lo), shift(hi));
    let (a, b) = (a.min(b), a.max(b));
    if a < b {
        (a, b)
    } else {
        (lo, hi)
    }
}

/// Answer for the bundle's query image, with label flips and box jitter
/// drawn from a generator keyed by `(seed, query id)`.
pub fn mock_respond(bundle: &PromptBundle, oracle: &MockOracle) -> Result<String, GatewayError> {
    let qid = bundle.query_id().ok_or(GatewayError::MissingQuery)?;
    let truth = oracle
        .ground_truth
        .get(qid)
        .ok_or_else(|| GatewayError::UnknownQuery(qid.to_string()))?;
    let cfg = &oracle.config;
    let invented = || Answer::Defect {
        mode: "defect".into(),
        bbox: default_defect_box(),
    };
    let mut answer = match (cfg.respond, truth) {
        (MockResponse::GroundTruth, a) => a.clone(),
        (MockResponse::AlwaysDefect, a @ Answer::Defect { .. }) => a.clone(),
        (MockResponse::AlwaysDefect, Answer::None) => invented(),
        (MockResponse::AlwaysNone, _) => Answer::None,
    };

    let mut rng = keyed_rng(cfg.seed, qid);
    let draw: f64 = rng.random();
    if draw < cfg.flip_probability {
        answer = match answer {
            Answer::None => invented(),
            Answer::Defect { .. } => Answer::None,
        };
    }
    if let Answer::Defect { mode, bbox } = &answer {
        if cfg.bbox_jitter > 0.0 {
            let (x1, x2) = jitter_axis(bbox.x1(), bbox.x2(), cfg.bbox_jitter, &mut rng);
            let (y1, y2) = jitter_axis(bbox.y1(), bbox.y2(), cfg.bbox_jitter, &mut rng);
            answer = Answer::Defect {
                mode: mode.clone(),
                bbox: BBox::new(x1, y1, x2, y2).expect("jittered box kept valid"),
            };
        }
    }
    Ok(render_answer(&answer))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub text: String,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
}

pub trait VlmBackend: Send + Sync {
    fn infer(&self, bundle: &PromptBundle) -> Result<InferenceOutput, GatewayError>;
}

/// Pure backend; latency is reported as 0 so outputs stay byte-identical.
pub struct MockBackend {
    oracle: MockOracle,
}

impl MockBackend {
    pub fn new(oracle: MockOracle) -> Result<Self, GatewayError> {
        oracle.config.validate()?;
        Ok(Self { oracle })
    }
}

impl VlmBackend for MockBackend {
    fn infer(&self, bundle: &PromptBundle) -> Result<InferenceOutput, GatewayError> {
        Ok(InferenceOutput {
            text: mock_respond(bundle, &self.oracle)?,
            latency_ms: 0,
            usage: None,
        })
    }
}

fn mime_for(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some(match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "bmp" => "image/bmp",
        "webp" => "image/webp",
        "gif" => "image/gif",
        "tif" | "tiff" => "image/tiff",
        _ => return None,
    })
}

/// `data:` URL with the file's bytes; unknown formats are decoded and
/// re-encoded as PNG.
pub fn image_data_url(path: &Path) -> Result<String, GatewayError> {
    let b64 = base64::engine::general_purpose::STANDARD;
    if let Some(mime) = mime_for(path) {
        let bytes = std::fs::read(path).map_err(|e| GatewayError::Input(format!("{}: {e}", path.display())))?;
        return Ok(format!("data:{mime};base64,{}", b64.encode(bytes)));
    }
    let img = image::open(path).map_err(|e| GatewayError::Input(format!("{}: {e}", path.display())))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| GatewayError::Input(format!("{}: {e}", path.display())))?;
    Ok(format!("data:image/png;base64,{}", b64.encode(buf.into_inner())))
}

/// Chat-completions request body for `bundle`.
pub fn build_request(bundle: &PromptBundle, config: &GatewayConfig) -> Result<Value, GatewayError> {
    let messages = bundle
        .messages
        .iter()
        .map(|m| {
            let content = m
                .parts
                .iter()
                .map(|p| match p {
                    Part::Text { text } => Ok(json!({"type": "text", "text": text})),
                    Part::Image { path, .. } => {
                        Ok(json!({"type": "image_url", "image_url": {"url": image_data_url(path)?}}))
                    }
                })
                .collect::<Result<Vec<_>, GatewayError>>()?;
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            Ok(json!({"role": role, "content": content}))
        })
        .collect::<Result<Vec<_>, GatewayError>>()?;
    Ok(json!({
        "model": config.model_name,
        "messages": messages,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }))
}

/// Structural check of a request body against the chat-completions schema
/// this gateway emits.
pub fn validate_request(body: &Value) -> Result<(), String> {
    let obj = body.as_object().ok_or("body is not an object")?;
    obj.get("model").and_then(Value::as_str).ok_or("model must be a string")?;
    obj.get("temperature").and_then(Value::as_f64).ok_or("temperature must be a number")?;
    obj.get("max_tokens").and_then(Value::as_u64).ok_or("max_tokens must be an integer")?;
    let messages = obj.get("messages").and_then(Value::as_array).ok_or("messages must be an array")?;
    if messages.is_empty() {
        return Err("messages is empty".into());
    }
    for (i, m) in messages.iter().enumerate() {
        let role = m.get("role").and_then(Value::as_str).ok_or(format!("messages[{i}].role missing"))?;
        if !matches!(role, "user" | "assistant" | "system") {
            return Err(format!("messages[{i}].role {role:?} not allowed"));
        }
        let content = m
            .get("content")
            .and_then(Value::as_array)
            .ok_or(format!("messages[{i}].content must be an array"))?;
        for (j, part) in content.iter().enumerate() {
            match part.get("type").and_then(Value::as_str) {
                Some("text") if part.get("text").is_some_and(Value::is_string) => {}
                Some("image_url")
                    if part
                        .pointer("/image_url/url")
                        .and_then(Value::as_str)
                        .is_some_and(|u| u.starts_with("data:image/")) => {}
                _ => return Err(format!("messages[{i}].content[{j}] is malformed")),
            }
        }
    }
    Ok(())
}

/// Text of the first choice; content may be a string or a list of text parts.
pub fn extract_text(response: &Value) -> Result<String, GatewayError> {
    let content = response
        .pointer("/choices/0/message/content")
        .ok_or_else(|| GatewayError::Response("no choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        other => return Err(GatewayError::Response(format!("content is {other}"))),
    };
    Ok(text.trim_end().to_string())
}

fn usage(response: &Value) -> Option<TokenUsage> {
    let u = response.get("usage")?;
    Some(TokenUsage {
        prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
        completion_tokens: u.get("completion_tokens")?.as_u64()?,
    })
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 300;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    config: GatewayConfig,
    url: String,
    token: Option<String>,
}

impl RemoteBackend {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let base = config.endpoint_url.clone().unwrap_or_default();
        let url = format!("{}/chat/completions", base.trim_end_matches('/'));
        let token = match &config.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(t) => Some(t),
                Err(_) => {
                    warn!("environment variable {var} is not set; sending no bearer token");
                    None
                }
            },
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            client,
            config,
            url,
            token,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.config.backoff_ms.saturating_mul(1 << attempt.min(16)))
    }
}

impl VlmBackend for RemoteBackend {
    fn infer(&self, bundle: &PromptBundle) -> Result<InferenceOutput, GatewayError> {
        let body = build_request(bundle, &self.config)?;
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(&self.url).json(&body);
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
            let retryable = match req.send() {
                Err(e) => GatewayError::Transport {
                    attempts: attempt + 1,
                    message: e.to_string(),
                },
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| GatewayError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    })?;
                    if status.is_success() {
                        let json: Value = serde_json::from_str(&text)
                            .map_err(|e| GatewayError::Response(format!("{e}: {}", excerpt(&text))))?;
                        return Ok(InferenceOutput {
                            text: extract_text(&json)?,
                            latency_ms: start.elapsed().as_millis() as u64,
                            usage: usage(&json),
                        });
                    }
                    let err = GatewayError::Backend {
                        status: status.as_u16(),
                        body: excerpt(&text),
                    };
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(err);
                    }
                    err
                }
            };
            if attempt >= self.config.max_retries {
                return Err(retryable);
            }
            debug!("attempt {} failed ({retryable}); retrying", attempt + 1);
            std::thread::sleep(self.backoff(attempt));
            attempt += 1;
        }
    }
}

/// Backend for `config`. The mock needs an oracle.
pub fn connect(config: &GatewayConfig, oracle: Option<MockOracle>) -> Result<Box<dyn VlmBackend>, GatewayError> {
    config.validate()?;
    match config.backend {
        BackendKind::Remote => Ok(Box::new(RemoteBackend::new(config.clone())?)),
        BackendKind::Mock => {
            let oracle = oracle.ok_or_else(|| GatewayError::Config("mock backend needs an oracle config".into()))?;
            Ok(Box::new(MockBackend::new(oracle)?))
        }
    }
}
