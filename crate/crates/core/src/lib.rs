//! Budget-constrained multi-agent orchestration.
//!
//! An orchestrator picks, step by step, either a single worker agent or a
//! collaboration module (a composed coordination strategy over several
//! workers) and a subtask for it, until it answers or runs out of money.
//! The budget-aware planner scores sampled candidates by self-consistency and
//! by how many speculative continuations still fit the remaining budget.

pub mod action;
pub mod agents;
pub mod collab;
pub mod cost;
pub mod grade;
pub mod money;
pub mod orchestrator;
pub mod planner;
pub mod reflection;
pub mod rng;

pub use action::{Action, ActionId, ActionKind, HistoryEntry, Transcript, Turn, FINISH};
pub use cost::{price_cost, CostLedger, CostRecord, PriceSheet, SharedLedger, TokenUsage};
pub use money::{Dollars, Estimate};
