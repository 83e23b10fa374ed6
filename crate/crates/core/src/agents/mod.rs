//! Worker agents and the backends that execute them.
//!
//! Two interchangeable [`Backend`]s exist: [`SyntheticWorld`], a seeded
//! multi-hop retrieval world for desk-scale experiments, and [`ChatBackend`],
//! which forwards role-templated prompts to a chat-completion endpoint.

mod chat;
pub mod observe;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionId, ActionKind, Transcript};
use crate::cost::TokenUsage;
use crate::rng::StreamKey;

pub use chat::{
    ChatBackend, ChatClient, ChatMessage, ChatRequest, ChatResponse, RolePrompts, ENV_ENDPOINT,
    ENV_TOKEN,
};
pub use world::{
    chain_doc, LogNormalParams, RoleTokens, SyntheticWorld, TokenModel, WorldParams, WorldTask,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Returns candidate document ids for a query.
    Searcher,
    /// Fetches the content of documents.
    Reader,
    /// Derives an answer from gathered evidence.
    Reasoner,
    /// Reports what information is still missing.
    Critic,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Searcher => "searcher",
            Role::Reader => "reader",
            Role::Reasoner => "reasoner",
            Role::Critic => "critic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerAgent {
    pub id: ActionId,
    pub role: Role,
    pub model: String,
}

impl WorkerAgent {
    pub fn new(name: impl Into<String>, role: Role, model: impl Into<String>) -> Self {
        WorkerAgent {
            id: ActionId::agent(name),
            role,
            model: model.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.id.name
    }

    pub fn is_valid(&self) -> bool {
        self.id.kind == ActionKind::Agent && !self.id.name.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationResult {
    pub output: String,
    pub usage: TokenUsage,
}

/// Where an invocation happens: which task, and a stream key naming the exact
/// position in the run (attempt, step, module path, agent). Backends derive
/// their randomness from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub task_id: String,
    pub key: StreamKey,
}

impl CallSite {
    pub fn new(task_id: impl Into<String>, key: StreamKey) -> Self {
        CallSite {
            task_id: task_id.into(),
            key,
        }
    }

    pub fn child(&self, part: impl std::fmt::Display) -> CallSite {
        CallSite {
            task_id: self.task_id.clone(),
            key: self.key.with(part),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("backend rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("provider response is missing token usage")]
    MalformedUsage,
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("document `{0}` does not exist")]
    UnknownDocument(String),
    #[error("agent `{0}` is not registered with this backend")]
    UnknownAgent(String),
    #[error("task `{0}` is not known to this backend")]
    UnknownTask(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

/// Executes worker agents. Implementations must tolerate concurrent calls from
/// ensemble branches.
pub trait Backend: Send + Sync {
    fn invoke(
        &self,
        agent: &WorkerAgent,
        subtask: &str,
        context: &Transcript,
        site: &CallSite,
    ) -> Result<InvocationResult, AgentError>;
}
