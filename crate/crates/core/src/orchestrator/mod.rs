//! The orchestration loop and its baselines.
//!
//! Every method shares one step loop: while steps remain and the budget is
//! positive, ask the policy for a next action, execute it, and record it.
//! Methods differ in the action space (agents only, or agents plus modules),
//! in whether the policy sees budget information, and in whether candidates
//! go through the dual-level planner.

mod log;
mod policy;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::HistoryEntry;
use crate::agents::Backend;
use crate::collab::ModuleRegistry;
use crate::cost::{CostRecord, PriceSheet};
use crate::money::Dollars;
use crate::planner::{PlannerParams, Speculator};
use crate::reflection::CostProfile;

pub use log::{read_log, write_log, LogRecord, ORCHESTRATOR_KIND};
pub use policy::{
    action_phase, latest_answer, parse_actions, phase_of, BestEffort, BudgetView, ChatPolicy,
    Critique, Phase, Policy, PolicyError, PolicyView, Proposal, RuleParams, RulePolicy, Verdict,
};
pub use run::{render_budget_prompt, run_best_of_n, run_iterative_verification, run_task};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("cost profile has no entry for `{0}`")]
    MissingProfile(String),
    #[error("method {0} needs a speculator")]
    MissingSpeculator(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ReactPlain,
    ReactBestOfN(u32),
    ReactIterVerify,
    ModulesBudgetUnaware,
    ModulesBudgetPrompt,
    FutureWeaver,
}

impl Method {
    /// Stable identifier used in logs, file names and reports.
    pub fn label(&self) -> String {
        match self {
            Method::ReactPlain => "react_plain".into(),
            Method::ReactBestOfN(n) => format!("react_best_of_{n}"),
            Method::ReactIterVerify => "react_iter_verify".into(),
            Method::ModulesBudgetUnaware => "modules_budget_unaware".into(),
            Method::ModulesBudgetPrompt => "modules_budget_prompt".into(),
            Method::FutureWeaver => "future_weaver".into(),
        }
    }

    pub fn uses_modules(&self) -> bool {
        matches!(
            self,
            Method::ModulesBudgetUnaware | Method::ModulesBudgetPrompt | Method::FutureWeaver
        )
    }

    pub fn budget_aware(&self) -> bool {
        matches!(self, Method::ModulesBudgetPrompt | Method::FutureWeaver)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = RunError;

    /// Accepts labels, plus `react_best_of_n` for N = 3.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s {
            "react_plain" | "react" => Method::ReactPlain,
            "react_best_of_n" => Method::ReactBestOfN(3),
            "react_iter_verify" => Method::ReactIterVerify,
            "modules_budget_unaware" => Method::ModulesBudgetUnaware,
            "modules_budget_prompt" => Method::ModulesBudgetPrompt,
            "future_weaver" => Method::FutureWeaver,
            other => match other.strip_prefix("react_best_of_").map(str::parse::<u32>) {
                Some(Ok(n)) if n >= 1 => Method::ReactBestOfN(n),
                _ => return Err(RunError::InvalidConfig(format!("unknown method `{other}`"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub budget: Dollars,
    pub t_max: usize,
    pub planner: PlannerParams,
    /// Charge orchestrator and planner tokens to the budget.
    pub meter_orchestrator_tokens: bool,
}

impl RunConfig {
    pub fn new(method: Method, budget: Dollars) -> Self {
        RunConfig {
            method,
            budget,
            t_max: 10,
            planner: PlannerParams::default(),
            meter_orchestrator_tokens: true,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if !self.budget.is_positive() {
            return Err(RunError::InvalidConfig("budget must be > 0".into()));
        }
        if self.t_max == 0 {
            return Err(RunError::InvalidConfig("t_max must be ≥ 1".into()));
        }
        if let Method::ReactBestOfN(0) = self.method {
            return Err(RunError::InvalidConfig("best-of-N needs N ≥ 1".into()));
        }
        self.planner
            .validate()
            .map_err(|e| RunError::InvalidConfig(e.to_string()))
    }
}

/// Backends and learned artifacts a run draws on.
#[derive(Clone, Copy)]
pub struct RunEnv<'a> {
    pub backend: &'a dyn Backend,
    pub prices: &'a PriceSheet,
    pub policy: &'a dyn Policy,
    pub registry: &'a ModuleRegistry,
    /// Required by budget-aware methods.
    pub profile: Option<&'a CostProfile>,
    /// Required by the planner.
    pub speculator: Option<&'a dyn Speculator>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub task_id: String,
    pub method: String,
    pub budget: Dollars,
    pub seed: u64,
    pub final_answer: Option<String>,
    /// The final answer matches the gold answer.
    pub solved: bool,
    /// The policy emitted finish.
    pub finished: bool,
    pub total_cost: Dollars,
    pub overshoot: bool,
    pub steps: usize,
    pub trajectory: Vec<HistoryEntry>,
    /// Charges outside any step: best-effort answers and confirmed critiques.
    pub extra_charges: Vec<CostRecord>,
    /// Cost of the last executed step or call.
    pub last_cost: Dollars,
    pub error: Option<String>,
    pub log: Vec<LogRecord>,
}

impl RunResult {
    /// Every charge made during the run.
    pub fn all_charges(&self) -> impl Iterator<Item = &CostRecord> {
        self.trajectory
            .iter()
            .flat_map(|e| e.overhead.iter().chain(e.charges.iter()))
            .chain(self.extra_charges.iter())
    }

    /// Solved within budget.
    pub fn strict_solved(&self) -> bool {
        self.solved && !self.overshoot
    }
}
