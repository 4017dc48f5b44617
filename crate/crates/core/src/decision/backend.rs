//! Text-completion backends the supervisor talks to.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Mutex;

use crate::trace::TokenUsage;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("http error: {0}")]
    Http(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no scripted response matches the prompt")]
    NoScriptedResponse,
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCompletion {
    pub text: String,
    /// Usage as reported by the provider, when it reports any.
    pub usage: Option<TokenUsage>,
}

impl RawCompletion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), usage: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[async_trait]
pub trait DecisionBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Whether concurrent `complete` calls are safe.
    fn supports_concurrency(&self) -> bool {
        true
    }

    async fn complete(&self, prompt: &str) -> Result<RawCompletion, BackendError>;
}

/// Shared handle that serialises calls for backends without concurrency
/// support and fills in estimated usage when the provider reports none.
#[derive(Clone)]
pub struct BackendHandle {
    inner: Arc<dyn DecisionBackend>,
    gate: Option<Arc<Mutex<()>>>,
}

impl std::fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendHandle").field("backend", &self.inner.name()).finish()
    }
}

impl BackendHandle {
    pub fn new(inner: Arc<dyn DecisionBackend>) -> Self {
        let gate = (!inner.supports_concurrency()).then(|| Arc::new(Mutex::new(())));
        Self { inner, gate }
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }

    pub async fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let _guard = match &self.gate {
            Some(gate) => Some(gate.lock().await),
            None => None,
        };
        let raw = self.inner.complete(prompt).await?;
        let usage = raw.usage.unwrap_or_else(|| TokenUsage::estimated(prompt, &raw.text));
        Ok(Completion { text: raw.text, usage })
    }
}

type Responder = dyn Fn(&str) -> Result<String, BackendError> + Send + Sync;

/// In-process backend driven by a closure; counts its calls.
pub struct MockBackend {
    responder: Box<Responder>,
    calls: AtomicUsize,
    concurrent: bool,
}

pub const APPROVE_REPLY: &str = r#"{"analysis": "mock backend approves", "action": "approve", "parameters": {}}"#;

impl MockBackend {
    pub fn from_fn(f: impl Fn(&str) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self { responder: Box::new(f), calls: AtomicUsize::new(0), concurrent: true }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::from_fn(move |_| Ok(reply.clone()))
    }

    /// Approves everything; other contexts then fall back.
    pub fn approving() -> Self {
        Self::fixed(APPROVE_REPLY)
    }

    pub fn failing() -> Self {
        Self::from_fn(|_| Err(BackendError::Unavailable("mock failure".into())))
    }

    pub fn serial(mut self) -> Self {
        self.concurrent = false;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl DecisionBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn supports_concurrency(&self) -> bool {
        self.concurrent
    }

    async fn complete(&self, prompt: &str) -> Result<RawCompletion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(prompt).map(RawCompletion::text)
    }
}

/// Never answers. Used to exercise deadlines.
#[derive(Debug, Default)]
pub struct HangingBackend {
    calls: AtomicUsize,
}

impl HangingBackend {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl DecisionBackend for HangingBackend {
    fn name(&self) -> &str {
        "hanging"
    }

    async fn complete(&self, _prompt: &str) -> Result<RawCompletion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::future::pending().await
    }
}

/// One fixture line: a prompt matcher and the reply to serve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

impl ScriptEntry {
    fn matches(&self, prompt: &str) -> bool {
        match (&self.prompt, &self.prompt_contains) {
            (Some(exact), _) => exact == prompt,
            (None, Some(needle)) => prompt.contains(needle.as_str()),
            (None, None) => true,
        }
    }
}

/// Replays fixture replies. The first entry, in file order, whose matcher
/// accepts the prompt wins.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries, calls: AtomicUsize::new(0) }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry =
                serde_json::from_str(line).map_err(|e| BackendError::Fixture(format!("line {}: {e}", n + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl DecisionBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted-replay"
    }

    async fn complete(&self, prompt: &str) -> Result<RawCompletion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.entries
            .iter()
            .find(|e| e.matches(prompt))
            .map(|e| RawCompletion { text: e.response.clone(), usage: e.usage })
            .ok_or(BackendError::NoScriptedResponse)
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client =
            reqwest::Client::builder().timeout(timeout).build().map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
        })
    }
}

#[async_trait]
impl DecisionBackend for HttpChatBackend {
    fn name(&self) -> &str {
        "http-chat-completion"
    }

    async fn complete(&self, prompt: &str) -> Result<RawCompletion, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| BackendError::Http(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Http(format!("status {status}")));
        }
        let value: serde_json::Value = resp.json().await.map_err(|e| BackendError::Malformed(e.to_string()))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?
            .to_string();
        let usage = match (value["usage"]["prompt_tokens"].as_u64(), value["usage"]["completion_tokens"].as_u64()) {
            (Some(p), Some(c)) => Some(TokenUsage::new(p, c)),
            _ => None,
        };
        Ok(RawCompletion { text, usage })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BackendKind {
    #[default]
    #[serde(rename = "mock")]
    Mock,
    #[serde(rename = "scripted-replay")]
    ScriptedReplay,
    #[serde(rename = "http-chat-completion")]
    HttpChatCompletion,
}

impl std::str::FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "scripted-replay" => Ok(BackendKind::ScriptedReplay),
            "http-chat-completion" => Ok(BackendKind::HttpChatCompletion),
            other => Err(BackendError::Config(format!(
                "unknown backend `{other}` (expected mock, scripted-replay or http-chat-completion)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub backend_name: BackendKind,
    pub base_url: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub key_env: Option<String>,
    /// scripted-replay fixture path.
    pub fixture: Option<PathBuf>,
    pub request_timeout_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend_name: BackendKind::Mock,
            base_url: None,
            model: "gpt-4.1".to_string(),
            key_env: None,
            fixture: None,
            request_timeout_ms: 60_000,
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn DecisionBackend>, BackendError> {
        match self.backend_name {
            BackendKind::Mock => Ok(Arc::new(MockBackend::approving())),
            BackendKind::ScriptedReplay => {
                let path = self
                    .fixture
                    .as_ref()
                    .ok_or_else(|| BackendError::Config("scripted-replay requires a fixture path".into()))?;
                Ok(Arc::new(ScriptedBackend::from_path(path)?))
            }
            BackendKind::HttpChatCompletion => {
                let url = self
                    .base_url
                    .as_deref()
                    .ok_or_else(|| BackendError::Config("http-chat-completion requires base_url".into()))?;
                let key = match &self.key_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
                    ),
                    None => None,
                };
                Ok(Arc::new(HttpChatBackend::new(
                    url,
                    &self.model,
                    key,
                    Duration::from_millis(self.request_timeout_ms),
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn handle_estimates_missing_usage() {
        let h = BackendHandle::new(Arc::new(MockBackend::fixed("abcd")));
        let c = h.complete(&"p".repeat(40)).await.unwrap();
        assert_eq!(c.usage, TokenUsage::new(10, 1));
    }

    #[tokio::test]
    async fn scripted_first_match_wins() {
        let fixture = r#"{"prompt_contains": "Debugger", "response": "A"}
{"prompt": "exact", "response": "B", "usage": {"prompt": 5, "completion": 6, "total": 11}}
{"response": "C"}"#;
        let b = ScriptedBackend::from_jsonl(fixture).unwrap();
        assert_eq!(b.complete("You are an expert Debugger").await.unwrap().text, "A");
        let exact = b.complete("exact").await.unwrap();
        assert_eq!(exact.text, "B");
        assert_eq!(exact.usage, Some(TokenUsage::new(5, 6)));
        assert_eq!(b.complete("other").await.unwrap().text, "C");
        assert_eq!(b.calls(), 3);
    }

    #[tokio::test]
    async fn scripted_without_match_errors() {
        let b = ScriptedBackend::from_jsonl(r#"{"prompt": "x", "response": "y"}"#).unwrap();
        assert_eq!(b.complete("z").await, Err(BackendError::NoScriptedResponse));
    }

    #[test]
    fn fixture_errors_name_the_line() {
        let err = ScriptedBackend::from_jsonl("{\"response\": \"a\"}\nnot json").unwrap_err();
        assert!(matches!(err, BackendError::Fixture(m) if m.starts_with("line 2")));
    }

    #[tokio::test]
    async fn serial_backend_is_gated() {
        use std::sync::atomic::AtomicBool;
        struct Probe {
            busy: AtomicBool,
            overlapped: AtomicBool,
        }
        #[async_trait]
        impl DecisionBackend for Probe {
            fn name(&self) -> &str {
                "probe"
            }
            fn supports_concurrency(&self) -> bool {
                false
            }
            async fn complete(&self, _: &str) -> Result<RawCompletion, BackendError> {
                if self.busy.swap(true, Ordering::SeqCst) {
                    self.overlapped.store(true, Ordering::SeqCst);
                }
                tokio::time::sleep(Duration::from_millis(5)).await;
                self.busy.store(false, Ordering::SeqCst);
                Ok(RawCompletion::text("ok"))
            }
        }
        let probe = Arc::new(Probe { busy: AtomicBool::new(false), overlapped: AtomicBool::new(false) });
        let h = BackendHandle::new(probe.clone());
        let tasks: Vec<_> = (0..8)
            .map(|_| {
                let h = h.clone();
                tokio::spawn(async move { h.complete("p").await })
            })
            .collect();
        for t in tasks {
            t.await.unwrap().unwrap();
        }
        assert!(!probe.overlapped.load(Ordering::SeqCst));
    }

    #[test]
    fn backend_kind_names() {
        assert_eq!("scripted-replay".parse::<BackendKind>().unwrap(), BackendKind::ScriptedReplay);
        assert!("gpt".parse::<BackendKind>().is_err());
        let cfg: BackendConfig =
            toml::from_str("backend_name = \"http-chat-completion\"\nbase_url = \"http://x\"").unwrap();
        assert_eq!(cfg.backend_name, BackendKind::HttpChatCompletion);
    }

    #[test]
    fn build_requires_fixture_or_url() {
        let cfg = BackendConfig { backend_name: BackendKind::ScriptedReplay, ..Default::default() };
        assert!(matches!(cfg.build(), Err(BackendError::Config(_))));
        let cfg = BackendConfig { backend_name: BackendKind::HttpChatCompletion, ..Default::default() };
        assert!(matches!(cfg.build(), Err(BackendError::Config(_))));
    }
}
