//! LLM-backed agents over an OpenAI-compatible chat-completion endpoint.
//!
//! The agent keeps one conversation across all trials of a session. When
//! the endpoint reports that the context is too long, the oldest trial's
//! messages are dropped and the call is repeated.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use cgbench_core::catalog::PieceCatalog;
use cgbench_core::config::Seat;
use cgbench_core::dsl::{self, Command};
use cgbench_core::session::EventKind;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::prompts::{render_event, render_materials, PromptProfile, Speaker};
use crate::render::render_board_png;
use crate::{Agent, AgentError, AgentTurn, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): doubling, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << retry.min(32)).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

fn default_timeout() -> u64 {
    60
}

/// Where an endpoint lives and how to authenticate. The API key is read
/// from the environment variable named here, never from the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Png(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> ChatMessage {
        ChatMessage { role, content: vec![ContentPart::Text(text.into())] }
    }

    pub fn has_image(&self) -> bool {
        self.content.iter().any(|c| matches!(c, ContentPart::Png(_)))
    }

    fn to_json(&self) -> Value {
        let content = match self.content.as_slice() {
            [ContentPart::Text(t)] => Value::String(t.clone()),
            parts => Value::Array(
                parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text(t) => json!({"type": "text", "text": t}),
                        ContentPart::Png(bytes) => json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes))}
                        }),
                    })
                    .collect(),
            ),
        };
        json!({"role": self.role.as_str(), "content": content})
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: server errors, rate limits, network failures.
    Transient(String),
    ContextOverflow,
    Fatal(String),
}

pub trait ChatBackend: Send {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::default()
    }
}

/// `POST {base_url}/chat/completions` with a bearer key.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChatBackend {
    pub fn new(endpoint: EndpointConfig, model: String) -> Result<HttpChatBackend, AgentError> {
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| AgentError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| AgentError::Config(format!("http client: {e}")))?;
        Ok(HttpChatBackend {
            client,
            url: format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/')),
            model,
            api_key,
            retry: endpoint.retry,
        })
    }
}

fn is_overflow(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    b.contains("context_length_exceeded") || b.contains("maximum context length")
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": messages.iter().map(ChatMessage::to_json).collect::<Vec<_>>(),
        });
        tracing::debug!(url = %self.url, authorization = "<redacted>", request = %body, "chat completion request");
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transient(format!("reading response: {e}")))?;
        tracing::debug!(%status, response = %text, "chat completion response");
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(if is_overflow(&text) {
                BackendError::ContextOverflow
            } else {
                BackendError::Fatal(format!("HTTP {status}: {text}"))
            });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }
}

#[derive(Debug, Clone)]
struct Entry {
    trial_index: u32,
    message: ChatMessage,
}

pub struct LlmAgent {
    seat: Seat,
    profile: PromptProfile,
    backend: Box<dyn ChatBackend>,
    catalog: Arc<PieceCatalog>,
    vision: bool,
    retry: RetryPolicy,
    history: Vec<Entry>,
    trial: Option<u32>,
    /// Whether something new arrived that calls for a reply.
    prompted: bool,
}

impl std::fmt::Debug for LlmAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmAgent").field("seat", &self.seat).field("history", &self.history.len()).finish()
    }
}

impl LlmAgent {
    pub fn new(
        seat: Seat,
        profile: PromptProfile,
        backend: Box<dyn ChatBackend>,
        catalog: Arc<PieceCatalog>,
        vision: bool,
    ) -> LlmAgent {
        let retry = backend.retry_policy();
        LlmAgent { seat, profile, backend, catalog, vision, retry, history: Vec::new(), trial: None, prompted: false }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Messages that would be sent for the current state.
    pub fn messages(&self, obs: &Observation<'_>) -> Vec<ChatMessage> {
        let grid = match obs.materials {
            cgbench_core::session::SeatMaterials::Helper(m) => m.grid,
            cgbench_core::session::SeatMaterials::Worker(m) => m.board.grid(),
        };
        let mut out = vec![ChatMessage::text(Role::System, self.profile.system_prompt(self.seat, obs.view, grid))];
        out.extend(self.history.iter().map(|e| e.message.clone()));
        out
    }

    fn push(&mut self, trial_index: u32, message: ChatMessage) {
        self.history.push(Entry { trial_index, message });
    }

    fn absorb(&mut self, obs: &Observation<'_>) {
        if self.trial != Some(obs.trial_index) {
            self.trial = Some(obs.trial_index);
            let intro = if obs.trial_index == 0 { "Practice puzzle" } else { "Next puzzle" };
            self.push(obs.trial_index, ChatMessage::text(Role::User, format!("{intro}.\n{}", render_materials(obs.materials))));
            self.prompted = self.seat == Seat::Helper;
        }
        for e in obs.new_events {
            let Some((speaker, text)) = render_event(e, self.seat) else { continue };
            let message = match (speaker, &e.kind) {
                (Speaker::Own, _) => ChatMessage::text(Role::Assistant, text),
                (_, EventKind::Snapshot { board }) if self.vision => ChatMessage {
                    role: Role::User,
                    content: vec![ContentPart::Text(text), ContentPart::Png(render_board_png(board, &self.catalog))],
                },
                _ => ChatMessage::text(Role::User, text),
            };
            if speaker != Speaker::Own {
                self.prompted = true;
            }
            self.push(e.trial_index, message);
        }
    }

    fn drop_oldest_trial(&mut self) -> bool {
        let Some(current) = self.trial else { return false };
        let Some(oldest) = self.history.iter().map(|e| e.trial_index).filter(|t| *t < current).min() else {
            return false;
        };
        self.history.retain(|e| e.trial_index != oldest);
        tracing::info!(seat = %self.seat, dropped_trial = oldest, "context overflow, dropped oldest trial");
        true
    }

    fn call(&mut self, obs: &Observation<'_>) -> Result<String, AgentError> {
        let mut attempts = 0;
        loop {
            match self.backend.complete(&self.messages(obs)) {
                Ok(text) => return Ok(text),
                Err(BackendError::ContextOverflow) => {
                    if !self.drop_oldest_trial() {
                        return Err(AgentError::ContextOverflow);
                    }
                }
                Err(BackendError::Fatal(message)) => return Err(AgentError::Endpoint { attempts: attempts + 1, message }),
                Err(BackendError::Transient(message)) => {
                    attempts += 1;
                    if attempts >= self.retry.max_attempts.max(1) {
                        return Err(AgentError::Endpoint { attempts, message });
                    }
                    tracing::warn!(seat = %self.seat, attempts, %message, "transient endpoint failure, retrying");
                    std::thread::sleep(self.retry.delay(attempts - 1));
                }
            }
        }
    }
}

impl Agent for LlmAgent {
    fn step(&mut self, obs: &Observation<'_>) -> Result<AgentTurn, AgentError> {
        self.absorb(obs);
        let helper_confirms = self.seat == Seat::Helper && obs.pending_proposal == Some(Seat::Worker);
        if !self.prompted || !(obs.can_send || helper_confirms) {
            return Ok(AgentTurn::pass());
        }
        let text = self.call(obs)?;
        self.prompted = false;
        let text = text.trim();
        // The Worker's DONE reaches the session through the chat text itself.
        let complete = self.seat == Seat::Helper && dsl::parse(text).is_ok_and(|cs| cs.contains(&Command::Done));
        Ok(AgentTurn { text: (!text.is_empty() && obs.can_send).then(|| text.to_string()), complete })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_attempts: 5, base_delay_ms: 100, max_delay_ms: 350 };
        let d: Vec<u64> = (0..4).map(|i| p.delay(i).as_millis() as u64).collect();
        assert_eq!(d, [100, 200, 350, 350]);
    }

    #[test]
    fn image_parts_become_data_urls() {
        let m = ChatMessage { role: Role::User, content: vec![ContentPart::Text("b".into()), ContentPart::Png(vec![1, 2, 3])] };
        let v = m.to_json();
        assert_eq!(v["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(ChatMessage::text(Role::System, "x").to_json(), json!({"role": "system", "content": "x"}));
    }

    #[test]
    fn overflow_detection() {
        assert!(is_overflow(r#"{"error":{"code":"context_length_exceeded"}}"#));
        assert!(!is_overflow(r#"{"error":{"code":"invalid_api_key"}}"#));
    }
}
