//! Pluggable completion backends.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::output::AgentOutput;

/// Everything a backend may look at for one completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub agent_id: String,
    pub prompt: String,
    /// Rendered lines of the agent's view, oldest first.
    pub history: Vec<String>,
    /// Index into `history` where the not-yet-consumed window starts.
    pub new_from: usize,
}

impl CompletionRequest {
    pub fn new_lines(&self) -> &[String] {
        &self.history[self.new_from.min(self.history.len())..]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("prompt needs about {estimated} tokens, over the configured limit of {limit}")]
    ContextLimit { estimated: usize, limit: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Response(String),
    #[error("missing credentials: environment variable {0} is not set")]
    Credentials(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Remote,
}

pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl fmt::Debug for dyn LlmBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LlmBackend({}, {:?})", self.name(), self.kind())
    }
}

/// Canned reply of a scripted entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedResponse {
    Output(AgentOutput),
    Text { text: String },
}

impl ScriptedResponse {
    fn render(&self) -> String {
        match self {
            ScriptedResponse::Output(o) => o.to_string(),
            ScriptedResponse::Text { text } => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEntry {
    pub agent: String,
    /// Fires when any new line contains this text; empty matches any window.
    #[serde(default)]
    pub on: String,
    pub response: ScriptedResponse,
}

/// Deterministic rule-table backend. The first entry for the agent whose
/// trigger text occurs in the new window answers; otherwise `no_action`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptedBackend {
    #[serde(default)]
    pub entries: Vec<ScriptedEntry>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptedEntry>) -> Self {
        Self { entries }
    }
}

fn idle_reply() -> String {
    AgentOutput::no_action("Nothing in the new events calls for an action.").to_string()
}

impl LlmBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let new = request.new_lines();
        Ok(self
            .entries
            .iter()
            .find(|e| {
                e.agent == request.agent_id
                    && (e.on.is_empty() || new.iter().any(|line| line.contains(&e.on)))
            })
            .map_or_else(idle_reply, |e| e.response.render()))
    }
}

/// Exact-lookup backend keyed by agent id and full view history. Built from
/// a dataset, it answers every recorded test point with its reference output.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    name: String,
    answers: HashMap<(String, String), String>,
}

impl OracleBackend {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            answers: HashMap::new(),
        }
    }

    pub fn insert(&mut self, agent: &str, history: &[String], output: &AgentOutput) {
        self.answers
            .insert((agent.to_string(), history.join("\n")), output.to_string());
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl LlmBackend for OracleBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let key = (request.agent_id.clone(), request.history.join("\n"));
        Ok(self.answers.get(&key).cloned().unwrap_or_else(idle_reply))
    }
}

/// Chat-completion endpoint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; unauthenticated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Prompt budget in estimated tokens.
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_max_tokens() -> u32 {
    512
}

fn default_context_limit() -> usize {
    32_000
}

fn default_timeout() -> u64 {
    60
}

/// Rough token count: four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    (text.chars().count() + 3) / 4
}

pub struct RemoteBackend {
    name: String,
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(name: impl Into<String>, config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            name: name.into(),
            config,
            client,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }
}

impl LlmBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let estimated = estimate_tokens(&request.prompt);
        if estimated > self.config.context_limit {
            return Err(BackendError::ContextLimit {
                estimated,
                limit: self.config.context_limit,
            });
        }
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut call = self.client.post(&self.config.url).json(&body);
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var).map_err(|_| BackendError::Credentials(var.clone()))?;
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Response(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Response("no choices[0].message.content".into()))
    }
}

/// Calls the backend, retrying once on failure.
pub fn complete_with_retry(
    backend: &dyn LlmBackend,
    request: &CompletionRequest,
) -> Result<String, BackendError> {
    backend.complete(request).or_else(|_| backend.complete(request))
}
