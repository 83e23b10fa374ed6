//! Frequent contiguous subsequence mining over successful trajectories.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TrajectoryStore;
use crate::action::{ActionId, ActionKind};
use crate::agents::Role;
use crate::collab::{
    Aggregator, CollaborationModule, ModuleRegistry, Provenance, Strategy, DEFAULT_MAX_ROUNDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinerParams {
    /// Minimum fraction of successful trajectories containing a pattern.
    pub min_support: f64,
    /// Longest pattern considered.
    pub max_len: usize,
    /// Rounds given to interactive abstractions.
    pub interactive_rounds: u32,
}

impl Default for MinerParams {
    fn default() -> Self {
        MinerParams {
            min_support: 0.5,
            max_len: 4,
            interactive_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedPattern {
    pub pattern: Vec<ActionId>,
    /// Successful trajectories containing the pattern.
    pub hits: usize,
    /// Successful trajectories considered.
    pub of: usize,
    pub module: CollaborationModule,
}

impl MinedPattern {
    pub fn support(&self) -> f64 {
        self.hits as f64 / self.of as f64
    }
}

/// First reasoner, else first critic, else a vote.
pub fn default_aggregator(registry: &ModuleRegistry) -> Aggregator {
    [Role::Reasoner, Role::Critic]
        .iter()
        .find_map(|role| registry.agents().iter().find(|a| a.role == *role))
        .map(|a| Aggregator::Agent(a.name().to_string()))
        .unwrap_or(Aggregator::MajorityVote)
}

/// Turns an observed id sequence into a strategy: a run of one id becomes an
/// ensemble, a strict `a,b,a[,b]` alternation an interaction, anything else a
/// pipeline. Module ids are inlined.
pub fn abstract_pattern(
    pattern: &[ActionId],
    registry: &ModuleRegistry,
    interactive_rounds: u32,
) -> Option<Strategy> {
    if pattern.len() < 2 {
        return None;
    }
    let parts: Vec<Strategy> = pattern
        .iter()
        .map(|id| registry.strategy_of(id))
        .collect::<Option<_>>()?;
    let first = &pattern[0];
    if pattern.iter().all(|id| id == first) {
        return Some(Strategy::ensemble(
            pattern.len() as u32,
            parts[0].clone(),
            default_aggregator(registry),
        ));
    }
    let alternating = pattern.len() >= 3
        && pattern[0] != pattern[1]
        && pattern
            .iter()
            .enumerate()
            .all(|(i, id)| *id == pattern[i % 2]);
    if alternating {
        return Some(Strategy::interactive(
            parts[0].clone(),
            parts[1].clone(),
            interactive_rounds,
        ));
    }
    Some(Strategy::pipeline(parts))
}

fn module_name(strategy: &Strategy, pattern: &[ActionId], registry: &ModuleRegistry) -> String {
    let names: Vec<&str> = pattern.iter().map(|id| id.name.as_str()).collect();
    let base = match strategy {
        Strategy::Ensemble { n, .. } => format!("mined_ensemble{n}_{}", names[0]),
        Strategy::Interactive { .. } => format!("mined_interactive_{}_{}", names[0], names[1]),
        _ => format!("mined_{}", names.join("_then_")),
    };
    let mut name = base.clone();
    let mut k = 2;
    while registry.resolve(&name).is_some() {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

/// All qualifying novel patterns, best first (support × length, then signature).
pub fn mine_patterns(
    store: &TrajectoryStore,
    registry: &ModuleRegistry,
    params: &MinerParams,
) -> Vec<MinedPattern> {
    assert!(
        params.min_support > 0.0 && params.min_support <= 1.0,
        "min_support out of range"
    );
    assert!(params.max_len >= 2, "max_len must be ≥ 2");
    let sequences: Vec<Vec<ActionId>> = store
        .successes()
        .map(|r| {
            r.action_ids()
                .into_iter()
                .filter(|id| id.kind != ActionKind::Finish)
                .collect()
        })
        .collect();
    let n = sequences.len();
    if n == 0 {
        return Vec::new();
    }
    let mut hits: BTreeMap<Vec<ActionId>, usize> = BTreeMap::new();
    for seq in &sequences {
        let mut seen = BTreeSet::new();
        for len in 2..=params.max_len.min(seq.len()) {
            for w in seq.windows(len) {
                seen.insert(w.to_vec());
            }
        }
        for p in seen {
            *hits.entry(p).or_default() += 1;
        }
    }
    let mut found: Vec<MinedPattern> = Vec::new();
    for (pattern, count) in hits {
        // count / n ≥ min_support, compared without dividing
        if (count as f64) < params.min_support * n as f64 - 1e-9 {
            continue;
        }
        let Some(strategy) = abstract_pattern(&pattern, registry, params.interactive_rounds) else {
            continue;
        };
        let name = module_name(&strategy, &pattern, registry);
        let module = CollaborationModule::new(name, strategy, Provenance::Mined);
        if registry.check_module(&module).is_err() {
            continue;
        }
        found.push(MinedPattern {
            pattern,
            hits: count,
            of: n,
            module,
        });
    }
    found.sort_by(|a, b| {
        let sa = a.hits * a.pattern.len();
        let sb = b.hits * b.pattern.len();
        sb.cmp(&sa)
            .then_with(|| a.module.signature().cmp(&b.module.signature()))
    });
    let mut signatures = BTreeSet::new();
    found.retain(|p| signatures.insert(p.module.signature()));
    found
}

pub fn mine_modules(
    store: &TrajectoryStore,
    registry: &ModuleRegistry,
    params: &MinerParams,
) -> Vec<CollaborationModule> {
    mine_patterns(store, registry, params)
        .into_iter()
        .map(|p| p.module)
        .collect()
}
