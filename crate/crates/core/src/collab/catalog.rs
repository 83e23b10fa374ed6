//! Stock agents and modules for the two reference task families.

use serde::{Deserialize, Serialize};

use super::{
    Aggregator, CollaborationModule, ModuleRegistry, Provenance, Strategy, DEFAULT_MAX_ROUNDS,
};
use crate::agents::{Role, WorkerAgent};

pub const HAIKU: &str = "claude-3-5-haiku-latest";
pub const SONNET: &str = "claude-3-7-sonnet-latest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// Open-web assistant tasks: search, browse, reason.
    GaiaLike,
    /// Deep-research retrieval: search, read, critic.
    BrowseLike,
}

pub fn builtin_agents(benchmark: Benchmark) -> Vec<WorkerAgent> {
    match benchmark {
        Benchmark::GaiaLike => vec![
            WorkerAgent::new("search", Role::Searcher, HAIKU),
            WorkerAgent::new("browse", Role::Reader, HAIKU),
            WorkerAgent::new("reason", Role::Reasoner, SONNET),
        ],
        Benchmark::BrowseLike => vec![
            WorkerAgent::new("search", Role::Searcher, HAIKU),
            WorkerAgent::new("read", Role::Reader, HAIKU),
            WorkerAgent::new("critic", Role::Critic, SONNET),
        ],
    }
}

fn single(a: &str) -> Strategy {
    Strategy::single(a)
}

pub fn builtin_catalog(benchmark: Benchmark) -> Vec<CollaborationModule> {
    let m = |name: &str, s: Strategy| CollaborationModule::new(name, s, Provenance::Builtin);
    match benchmark {
        Benchmark::GaiaLike => {
            let reason = || Aggregator::Agent("reason".into());
            vec![
                m(
                    "interactive_search_and_browse",
                    Strategy::interactive(single("search"), single("browse"), DEFAULT_MAX_ROUNDS),
                ),
                m(
                    "search_then_browse",
                    Strategy::pipeline(vec![single("search"), single("browse")]),
                ),
                m(
                    "ensemble_search",
                    Strategy::ensemble(3, single("search"), reason()),
                ),
                m(
                    "two_ensemble_reasoning",
                    Strategy::ensemble(2, single("reason"), reason()),
                ),
                m(
                    "three_ensemble_reasoning",
                    Strategy::ensemble(3, single("reason"), reason()),
                ),
            ]
        }
        Benchmark::BrowseLike => {
            let critic = || Aggregator::Agent("critic".into());
            let inter =
                || Strategy::interactive(single("search"), single("read"), DEFAULT_MAX_ROUNDS);
            let inter_critic = || Strategy::pipeline(vec![inter(), single("critic")]);
            vec![
                m("interactive_search", inter()),
                m(
                    "ensemble_interactive_search",
                    Strategy::ensemble(3, inter(), critic()),
                ),
                m("interactive_search_then_critic", inter_critic()),
                m(
                    "ensemble_interactive_search_then_critic",
                    Strategy::ensemble(3, inter_critic(), critic()),
                ),
            ]
        }
    }
}

/// Agents plus builtin modules.
pub fn builtin_registry(benchmark: Benchmark) -> ModuleRegistry {
    let mut r = ModuleRegistry::with_agents(builtin_agents(benchmark)).expect("static agents");
    for m in builtin_catalog(benchmark) {
        r.add_module(m).expect("static catalog");
    }
    r
}
