//! Collaboration modules: coordination strategies over worker agents, the
//! registry that forms the orchestrator's action space, and the executor.

mod catalog;
mod exec;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionId, ActionKind};
use crate::agents::{AgentError, WorkerAgent};
use crate::cost::CostError;

pub use catalog::{builtin_agents, builtin_catalog, builtin_registry, Benchmark, HAIKU, SONNET};
pub use exec::{execute_action, execute_module, execute_strategy, ExecEnv, Execution};

/// Rounds used by interactive modules unless configured otherwise.
pub const DEFAULT_MAX_ROUNDS: u32 = 4;

#[derive(Debug, Error)]
pub enum CollabError {
    #[error(transparent)]
    Backend(#[from] AgentError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("module `{module}` failed: {reason}")]
    ModuleFailed { module: String, reason: String },
    #[error("action `{0}` is not in the registry")]
    UnknownAction(String),
    #[error("id `{0}` is already registered")]
    DuplicateId(String),
    #[error("module `{name}` duplicates the structure of `{existing}`")]
    DuplicateSignature { name: String, existing: String },
    #[error("strategy references unregistered agent `{0}`")]
    UnknownMember(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("module `{0}` lists members that differ from its strategy")]
    MemberMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// One invocation of this agent over all branch outputs.
    Agent(String),
    /// Modal `answer` line across branches; costs nothing.
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Strategy {
    Single {
        agent: String,
    },
    Pipeline {
        children: Vec<Strategy>,
    },
    Interactive {
        left: Box<Strategy>,
        right: Box<Strategy>,
        max_rounds: u32,
    },
    Ensemble {
        n: u32,
        child: Box<Strategy>,
        aggregator: Aggregator,
    },
}

impl Strategy {
    pub fn single(agent: impl Into<String>) -> Self {
        Strategy::Single {
            agent: agent.into(),
        }
    }

    pub fn pipeline(children: Vec<Strategy>) -> Self {
        Strategy::Pipeline { children }
    }

    pub fn interactive(left: Strategy, right: Strategy, max_rounds: u32) -> Self {
        Strategy::Interactive {
            left: Box::new(left),
            right: Box::new(right),
            max_rounds,
        }
    }

    pub fn ensemble(n: u32, child: Strategy, aggregator: Aggregator) -> Self {
        Strategy::Ensemble {
            n,
            child: Box::new(child),
            aggregator,
        }
    }

    /// Agents referenced anywhere in the tree, aggregators included.
    pub fn members(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_members(&mut out);
        out
    }

    fn collect_members(&self, out: &mut BTreeSet<String>) {
        match self {
            Strategy::Single { agent } => {
                out.insert(agent.clone());
            }
            Strategy::Pipeline { children } => children.iter().for_each(|c| c.collect_members(out)),
            Strategy::Interactive { left, right, .. } => {
                left.collect_members(out);
                right.collect_members(out);
            }
            Strategy::Ensemble {
                child, aggregator, ..
            } => {
                child.collect_members(out);
                if let Aggregator::Agent(a) = aggregator {
                    out.insert(a.clone());
                }
            }
        }
    }

    /// The agent that acts first when the strategy runs.
    pub fn first_agent(&self) -> &str {
        match self {
            Strategy::Single { agent } => agent,
            Strategy::Pipeline { children } => children
                .first()
                .map(Strategy::first_agent)
                .unwrap_or_default(),
            Strategy::Interactive { left, .. } => left.first_agent(),
            Strategy::Ensemble { child, .. } => child.first_agent(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Strategy::Single { .. } => 1,
            Strategy::Pipeline { children } => {
                1 + children.iter().map(Strategy::depth).max().unwrap_or(0)
            }
            Strategy::Interactive { left, right, .. } => 1 + left.depth().max(right.depth()),
            Strategy::Ensemble { child, .. } => 1 + child.depth(),
        }
    }

    /// Structural checks that do not need a registry.
    pub fn validate_shape(&self) -> Result<(), CollabError> {
        match self {
            Strategy::Single { agent } if agent.is_empty() => {
                Err(CollabError::InvalidStrategy("empty agent name".into()))
            }
            Strategy::Single { .. } => Ok(()),
            Strategy::Pipeline { children } => {
                if children.is_empty() {
                    return Err(CollabError::InvalidStrategy("empty pipeline".into()));
                }
                children.iter().try_for_each(Strategy::validate_shape)
            }
            Strategy::Interactive {
                left,
                right,
                max_rounds,
            } => {
                if *max_rounds < 1 {
                    return Err(CollabError::InvalidStrategy(
                        "max_rounds must be ≥ 1".into(),
                    ));
                }
                left.validate_shape()?;
                right.validate_shape()
            }
            Strategy::Ensemble { n, child, .. } => {
                if *n < 2 {
                    return Err(CollabError::InvalidStrategy("ensemble needs n ≥ 2".into()));
                }
                child.validate_shape()
            }
        }
    }

    /// Canonical structural form. Ensembles replicate a single child, so the
    /// only ordering that matters is the one in pipelines and interactions.
    pub fn signature(&self) -> String {
        match self {
            Strategy::Single { agent } => format!("single({agent})"),
            Strategy::Pipeline { children } => format!(
                "pipeline[{}]",
                children
                    .iter()
                    .map(Strategy::signature)
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            Strategy::Interactive {
                left,
                right,
                max_rounds,
            } => format!(
                "interactive({max_rounds})[{},{}]",
                left.signature(),
                right.signature()
            ),
            Strategy::Ensemble {
                n,
                child,
                aggregator,
            } => {
                let agg = match aggregator {
                    Aggregator::Agent(a) => a.as_str(),
                    Aggregator::MajorityVote => "vote",
                };
                format!("ensemble({n},agg={agg})[{}]", child.signature())
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.signature())
    }
}

pub fn structural_signature(strategy: &Strategy) -> String {
    strategy.signature()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Builtin,
    Mined,
    Reflected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollaborationModule {
    pub id: ActionId,
    pub name: String,
    pub members: BTreeSet<String>,
    pub strategy: Strategy,
    pub provenance: Provenance,
}

impl CollaborationModule {
    pub fn new(name: impl Into<String>, strategy: Strategy, provenance: Provenance) -> Self {
        let name = name.into();
        CollaborationModule {
            id: ActionId::module(name.clone()),
            members: strategy.members(),
            name,
            strategy,
            provenance,
        }
    }

    pub fn signature(&self) -> String {
        self.strategy.signature()
    }
}

/// Agents, modules, and the implicit finish action.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleRegistry {
    agents: Vec<WorkerAgent>,
    modules: Vec<CollaborationModule>,
}

impl ModuleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_agents(agents: impl IntoIterator<Item = WorkerAgent>) -> Result<Self, CollabError> {
        let mut r = Self::new();
        for a in agents {
            r.add_agent(a)?;
        }
        Ok(r)
    }

    fn name_taken(&self, name: &str) -> bool {
        name == crate::action::FINISH
            || self.agents.iter().any(|a| a.name() == name)
            || self.modules.iter().any(|m| m.name == name)
    }

    pub fn add_agent(&mut self, agent: WorkerAgent) -> Result<(), CollabError> {
        if !agent.is_valid() {
            return Err(CollabError::InvalidStrategy(format!(
                "invalid agent `{}`",
                agent.name()
            )));
        }
        if self.name_taken(agent.name()) {
            return Err(CollabError::DuplicateId(agent.name().to_string()));
        }
        self.agents.push(agent);
        Ok(())
    }

    /// Validates a module against this registry without inserting it.
    pub fn check_module(&self, module: &CollaborationModule) -> Result<(), CollabError> {
        if module.id.kind != ActionKind::Module || module.id.name != module.name {
            return Err(CollabError::InvalidStrategy(format!(
                "module `{}` has a non-module id",
                module.name
            )));
        }
        if self.name_taken(&module.name) {
            return Err(CollabError::DuplicateId(module.name.clone()));
        }
        module.strategy.validate_shape()?;
        let leaves = module.strategy.members();
        if leaves != module.members {
            return Err(CollabError::MemberMismatch(module.name.clone()));
        }
        if let Some(missing) = leaves.iter().find(|a| self.agent(a).is_none()) {
            return Err(CollabError::UnknownMember(missing.clone()));
        }
        if let Some(existing) = self.find_signature(&module.signature()) {
            return Err(CollabError::DuplicateSignature {
                name: module.name.clone(),
                existing: existing.to_string(),
            });
        }
        Ok(())
    }

    pub fn add_module(&mut self, module: CollaborationModule) -> Result<(), CollabError> {
        self.check_module(&module)?;
        self.modules.push(module);
        Ok(())
    }

    /// Name of the registered module with this signature. A bare agent counts
    /// as the `single(..)` structure.
    pub fn find_signature(&self, signature: &str) -> Option<&str> {
        self.modules
            .iter()
            .find(|m| m.signature() == signature)
            .map(|m| m.name.as_str())
            .or_else(|| {
                self.agents
                    .iter()
                    .find(|a| Strategy::single(a.name()).signature() == signature)
                    .map(|a| a.name())
            })
    }

    pub fn agents(&self) -> &[WorkerAgent] {
        &self.agents
    }

    pub fn modules(&self) -> &[CollaborationModule] {
        &self.modules
    }

    pub fn agent(&self, name: &str) -> Option<&WorkerAgent> {
        self.agents.iter().find(|a| a.name() == name)
    }

    pub fn module(&self, name: &str) -> Option<&CollaborationModule> {
        self.modules.iter().find(|m| m.name == name)
    }

    /// The action space: agents, then modules in registration order, then finish.
    pub fn action_ids(&self) -> Vec<ActionId> {
        self.agents
            .iter()
            .map(|a| a.id.clone())
            .chain(self.modules.iter().map(|m| m.id.clone()))
            .chain(std::iter::once(ActionId::finish()))
            .collect()
    }

    pub fn contains(&self, id: &ActionId) -> bool {
        match id.kind {
            ActionKind::Agent => self.agent(&id.name).is_some(),
            ActionKind::Module => self.module(&id.name).is_some(),
            ActionKind::Finish => id.is_finish(),
        }
    }

    /// The strategy an action runs; a bare agent is `Single`.
    pub fn strategy_of(&self, id: &ActionId) -> Option<Strategy> {
        match id.kind {
            ActionKind::Agent => self.agent(&id.name).map(|a| Strategy::single(a.name())),
            ActionKind::Module => self.module(&id.name).map(|m| m.strategy.clone()),
            ActionKind::Finish => None,
        }
    }

    /// Resolves a bare name to an action id.
    pub fn resolve(&self, name: &str) -> Option<ActionId> {
        if name == crate::action::FINISH {
            Some(ActionId::finish())
        } else if let Some(a) = self.agent(name) {
            Some(a.id.clone())
        } else {
            self.module(name).map(|m| m.id.clone())
        }
    }

    /// Copy keeping only the modules accepted by `keep`.
    pub fn retain_modules(&self, mut keep: impl FnMut(&CollaborationModule) -> bool) -> Self {
        ModuleRegistry {
            agents: self.agents.clone(),
            modules: self.modules.iter().filter(|m| keep(m)).cloned().collect(),
        }
    }

    /// Rebuilds a registry from its serialized form, re-checking every invariant.
    pub fn validated(self) -> Result<Self, CollabError> {
        let mut r = ModuleRegistry::with_agents(self.agents)?;
        for m in self.modules {
            r.add_module(m)?;
        }
        Ok(r)
    }
}
