//! Blocking chat-completion client and the role-templated backend built on it.
//!
//! Wire format: `POST {endpoint}` with `{model, messages: [{role, content}],
//! max_tokens}`, answered by `{text, usage: {input_tokens, output_tokens}}`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AgentError, Backend, CallSite, InvocationResult, Role, WorkerAgent};
use crate::action::Transcript;
use crate::cost::TokenUsage;

/// Endpoint URL of the chat service.
pub const ENV_ENDPOINT: &str = "WEAVER_CHAT_ENDPOINT";
/// Bearer token sent with every request, if set.
pub const ENV_TOKEN: &str = "WEAVER_CHAT_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Deserialize)]
struct WireUsage {
    input_tokens: Option<u64>,
    output_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    text: Option<String>,
    usage: Option<WireUsage>,
}

enum Attempt {
    Retry(String),
    Fatal(AgentError),
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: String,
    token: Option<String>,
    attempts: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl ChatClient {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        ChatClient {
            endpoint: endpoint.into(),
            token,
            attempts: 3,
            backoff: Duration::from_millis(500),
            agent,
        }
    }

    /// Reads [`ENV_ENDPOINT`] and [`ENV_TOKEN`].
    pub fn from_env() -> Result<Self, AgentError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| AgentError::NotConfigured(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(ENV_TOKEN).ok()))
    }

    /// Total attempts per request (first try included) and the initial
    /// backoff, doubled after each failure.
    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, AgentError> {
        if request.messages.is_empty() {
            return Err(AgentError::InvalidRequest("message list is empty".into()));
        }
        if request.model.is_empty() {
            return Err(AgentError::InvalidRequest("model is empty".into()));
        }
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => {
                    log::warn!("chat attempt {attempt}/{} failed: {reason}", self.attempts);
                    last = reason;
                    if attempt < self.attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(AgentError::BackendUnavailable {
            attempts: self.attempts,
            reason: last,
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, Attempt> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = call
            .send_json(request)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(AgentError::Rejected { status, body }));
        }
        let wire: WireResponse = serde_json::from_str(&body)
            .map_err(|e| Attempt::Fatal(AgentError::MalformedResponse(e.to_string())))?;
        let text = wire
            .text
            .ok_or_else(|| Attempt::Fatal(AgentError::MalformedResponse("missing text".into())))?;
        match wire.usage {
            Some(WireUsage {
                input_tokens: Some(i),
                output_tokens: Some(o),
            }) => Ok(ChatResponse {
                text,
                usage: TokenUsage::new(i, o),
            }),
            _ => Err(Attempt::Fatal(AgentError::MalformedUsage)),
        }
    }
}

/// System prompt per worker role. `{subtask}` is substituted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RolePrompts(pub BTreeMap<Role, String>);

impl Default for RolePrompts {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(
            Role::Searcher,
            "You are a retrieval agent. Return the ids of the five documents most relevant to: {subtask}".to_string(),
        );
        m.insert(
            Role::Reader,
            "You are a reading agent. Return the full content of the documents referenced in: {subtask}".to_string(),
        );
        m.insert(
            Role::Reasoner,
            "You are a reasoning agent. Using only the conversation so far, solve: {subtask}. End with a line `answer <final answer>`.".to_string(),
        );
        m.insert(
            Role::Critic,
            "You are a critic. State which information is still missing to solve: {subtask}. If nothing is missing reply `complete` and give `answer <final answer>`.".to_string(),
        );
        RolePrompts(m)
    }
}

impl RolePrompts {
    pub fn render(&self, role: Role, subtask: &str) -> String {
        let template = self.0.get(&role).map(String::as_str).unwrap_or("{subtask}");
        template.replace("{subtask}", subtask)
    }
}

/// Renders a transcript as `speaker: text` blocks.
pub(crate) fn render_transcript(context: &Transcript) -> String {
    context
        .turns()
        .iter()
        .map(|t| format!("[{}]\n{}", t.speaker, t.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone)]
pub struct ChatBackend {
    client: ChatClient,
    prompts: RolePrompts,
    max_tokens: u32,
}

impl ChatBackend {
    pub fn new(client: ChatClient, prompts: RolePrompts, max_tokens: u32) -> Self {
        ChatBackend {
            client,
            prompts,
            max_tokens,
        }
    }

    pub fn client(&self) -> &ChatClient {
        &self.client
    }
}

impl Backend for ChatBackend {
    fn invoke(
        &self,
        agent: &WorkerAgent,
        subtask: &str,
        context: &Transcript,
        _site: &CallSite,
    ) -> Result<InvocationResult, AgentError> {
        let mut messages = vec![ChatMessage::system(
            self.prompts.render(agent.role, subtask),
        )];
        if !context.is_empty() {
            messages.push(ChatMessage::user(render_transcript(context)));
        }
        messages.push(ChatMessage::user(subtask));
        let resp = self.client.complete(&ChatRequest {
            model: agent.model.clone(),
            messages,
            max_tokens: self.max_tokens,
        })?;
        Ok(InvocationResult {
            output: resp.text,
            usage: resp.usage,
        })
    }
}
