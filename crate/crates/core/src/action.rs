//! Actions, history entries and the transcript handed to workers.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostRecord, StepCost};

/// Reserved name of the terminal action.
pub const FINISH: &str = "finish";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Agent,
    Module,
    Finish,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Agent => "agent",
            ActionKind::Module => "module",
            ActionKind::Finish => "finish",
        }
    }
}

/// Identifies one element of the orchestrator's action space: a worker agent,
/// a collaboration module, or finish.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId {
    pub kind: ActionKind,
    pub name: String,
}

impl ActionId {
    pub fn agent(name: impl Into<String>) -> Self {
        ActionId {
            kind: ActionKind::Agent,
            name: name.into(),
        }
    }

    pub fn module(name: impl Into<String>) -> Self {
        ActionId {
            kind: ActionKind::Module,
            name: name.into(),
        }
    }

    pub fn finish() -> Self {
        ActionId {
            kind: ActionKind::Finish,
            name: FINISH.to_string(),
        }
    }

    pub fn is_finish(&self) -> bool {
        self.kind == ActionKind::Finish
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("subtask for `{0}` is empty")]
    EmptySubtask(String),
}

/// An orchestrator decision: which agent or module, and with what subtask.
/// For finish the subtask carries the final answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub id: ActionId,
    pub subtask: String,
}

impl Action {
    pub fn new(id: ActionId, subtask: impl Into<String>) -> Result<Self, ActionError> {
        let subtask = subtask.into();
        if subtask.trim().is_empty() {
            return Err(ActionError::EmptySubtask(id.name));
        }
        Ok(Action { id, subtask })
    }

    pub fn finish(answer: impl Into<String>) -> Result<Self, ActionError> {
        Action::new(ActionId::finish(), answer)
    }
}

/// One executed step of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub action: Action,
    pub output: String,
    /// Every priced call made while executing the action (one per worker
    /// invocation; empty for finish).
    pub charges: Vec<CostRecord>,
    /// Orchestrator and planner calls that chose this action.
    #[serde(default)]
    pub overhead: Vec<CostRecord>,
}

impl HistoryEntry {
    /// Cost of executing the action alone.
    pub fn action_cost(&self) -> StepCost {
        StepCost::of(&self.charges)
    }

    /// Action cost plus the overhead of deciding on it.
    pub fn cost(&self) -> StepCost {
        StepCost::of(&self.charges) + StepCost::of(&self.overhead)
    }
}

/// One utterance visible to a worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Turn {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// Context handed to workers: the run history flattened into turns, plus
/// whatever a module has accumulated so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    turns: Vec<Turn>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_history(history: &[HistoryEntry]) -> Self {
        Transcript {
            turns: history
                .iter()
                .map(|e| Turn::new(e.action.id.name.clone(), e.output.clone()))
                .collect(),
        }
    }

    pub fn push(&mut self, turn: Turn) {
        self.turns.push(turn);
    }

    pub fn with(&self, extra: impl IntoIterator<Item = Turn>) -> Transcript {
        let mut t = self.clone();
        t.turns.extend(extra);
        t
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Checks that steps are numbered 0, 1, 2, ...
pub fn steps_contiguous(history: &[HistoryEntry]) -> bool {
    history.iter().enumerate().all(|(i, e)| e.step == i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_subtask_rejected() {
        assert!(Action::new(ActionId::agent("search"), "  ").is_err());
        assert!(Action::finish("").is_err());
        assert!(Action::finish("42").is_ok());
    }

    #[test]
    fn finish_has_reserved_name() {
        let f = ActionId::finish();
        assert_eq!(f.name, FINISH);
        assert!(f.is_finish());
        assert_ne!(f, ActionId::agent(FINISH));
    }
}
