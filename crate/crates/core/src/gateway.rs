//! Pluggable LLM gateway: one `send(prompt, params)` operation with live,
//! record/replay and mock implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayParams {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GatewayParams {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature: 0.7,
            top_p: 1.0,
            max_tokens: 2000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway unavailable: {0}")]
    Unavailable(String),
    #[error("no API key configured for the live gateway")]
    MissingKey,
    #[error("gateway returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed gateway response: {0}")]
    Decode(String),
    #[error("no recorded response for prompt {key}")]
    ReplayMiss { key: String },
    #[error("recording store: {0}")]
    Io(String),
}

pub trait LlmGateway: Send + Sync {
    /// Identifier recorded in provenance.
    fn name(&self) -> String;
    fn send(&self, prompt: &str, params: &GatewayParams) -> Result<String, GatewayError>;
}

type Responder = dyn Fn(&str) -> Result<String, GatewayError> + Send + Sync;

/// In-process gateway answering through a closure.
pub struct MockGateway {
    name: String,
    respond: Box<Responder>,
}

impl MockGateway {
    pub fn new(
        name: impl Into<String>,
        respond: impl Fn(&str) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            respond: Box::new(respond),
        }
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new("mock:fixed", move |_| Ok(text.clone()))
    }

    pub fn uppercase() -> Self {
        Self::new("mock:uppercase", |p| Ok(p.to_uppercase()))
    }

    pub fn failing(message: impl Into<String>) -> Self {
        let message = message.into();
        Self::new("mock:failing", move |_| Err(GatewayError::Unavailable(message.clone())))
    }
}

impl LlmGateway for MockGateway {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn send(&self, prompt: &str, _params: &GatewayParams) -> Result<String, GatewayError> {
        (self.respond)(prompt)
    }
}

/// Recording key: sha256 over the prompt and the serialized params.
pub fn replay_key(prompt: &str, params: &GatewayParams) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_vec(params).expect("params serialize"));
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Recorded {
    prompt: String,
    params: GatewayParams,
    response: String,
}

/// Answers from `<dir>/<key>.json`; in record mode misses are forwarded to
/// an inner gateway and stored.
pub struct ReplayGateway {
    dir: PathBuf,
    upstream: Option<Box<dyn LlmGateway>>,
}

impl ReplayGateway {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            upstream: None,
        }
    }

    pub fn record(dir: impl Into<PathBuf>, upstream: Box<dyn LlmGateway>) -> Self {
        Self {
            dir: dir.into(),
            upstream: Some(upstream),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }
}

impl LlmGateway for ReplayGateway {
    fn name(&self) -> String {
        match &self.upstream {
            Some(u) => format!("record:{}", u.name()),
            None => "replay".into(),
        }
    }

    fn send(&self, prompt: &str, params: &GatewayParams) -> Result<String, GatewayError> {
        let key = replay_key(prompt, params);
        let path = self.path(&key);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let r: Recorded = serde_json::from_str(&text).map_err(|e| GatewayError::Decode(e.to_string()))?;
                return Ok(r.response);
            }
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                return Err(GatewayError::Io(format!("{}: {e}", path.display())))
            }
            Err(_) => {}
        }
        let Some(upstream) = &self.upstream else {
            return Err(GatewayError::ReplayMiss { key });
        };
        let response = upstream.send(prompt, params)?;
        fs::create_dir_all(&self.dir).map_err(|e| GatewayError::Io(e.to_string()))?;
        let doc = Recorded {
            prompt: prompt.to_string(),
            params: params.clone(),
            response: response.clone(),
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| GatewayError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        Ok(response)
    }
}

/// OpenAI-compatible chat-completions client. `url` is the full endpoint.
pub struct HttpGateway {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpGateway {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Unavailable(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            api_key,
            client,
        })
    }
}

impl LlmGateway for HttpGateway {
    fn name(&self) -> String {
        format!("http:{}", self.url)
    }

    fn send(&self, prompt: &str, params: &GatewayParams) -> Result<String, GatewayError> {
        let key = self.api_key.as_deref().ok_or(GatewayError::MissingKey)?;
        let body = json!({
            "model": params.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        });
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GatewayError::Http {
                status: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            });
        }
        let v: Value = resp.json().map_err(|e| GatewayError::Decode(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Decode("missing choices[0].message.content".into()))
    }
}
