//! Self-play reflection: a store of executed trajectories, per-action cost
//! statistics learned from it, and module induction from recurring patterns.

mod miner;
mod reflect;
mod selfplay;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionId, ActionKind, HistoryEntry};
use crate::agents::AgentError;
use crate::cost::StepCost;
use crate::money::{Dollars, Estimate};
use crate::rng::digest;

pub use miner::{
    abstract_pattern, default_aggregator, mine_modules, mine_patterns, MinedPattern, MinerParams,
};
pub use reflect::{llm_reflect, parse_workflow, ReflectOutcome, DEFAULT_REFLECTION_PROMPT};
pub use selfplay::{round_seed, run_selfplay, SelfPlayConfig, SelfPlayOutcome};

#[derive(Debug, Error)]
pub enum ReflectError {
    #[error("trajectory store is empty")]
    EmptyStore,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Backend(#[from] AgentError),
    #[error("invalid self-play request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredStep {
    pub action: ActionId,
    pub subtask: String,
    pub output_digest: String,
    /// Everything spent on the step, including the orchestrator call that
    /// chose it.
    pub cost: StepCost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub round: u32,
    pub success: bool,
    pub steps: Vec<StoredStep>,
}

impl TrajectoryRecord {
    pub fn from_history(
        task_id: &str,
        round: u32,
        success: bool,
        history: &[HistoryEntry],
    ) -> Self {
        TrajectoryRecord {
            task_id: task_id.to_string(),
            round,
            success,
            steps: history
                .iter()
                .map(|e| StoredStep {
                    action: e.action.id.clone(),
                    subtask: e.action.subtask.clone(),
                    output_digest: digest(&e.output),
                    cost: e.cost(),
                })
                .collect(),
        }
    }

    pub fn action_ids(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum StoreLine {
    Step {
        task_id: String,
        round: u32,
        step: usize,
        action_kind: ActionKind,
        action_name: String,
        subtask: String,
        subtask_digest: String,
        output_digest: String,
        input_tokens: u64,
        output_tokens: u64,
        dollars: Dollars,
    },
    End {
        task_id: String,
        round: u32,
        steps: usize,
        success: bool,
    },
}

/// Append-only log of self-play trajectories.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrajectoryStore {
    records: Vec<TrajectoryRecord>,
}

impl TrajectoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: TrajectoryRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn successes(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.records.iter().filter(|r| r.success)
    }

    /// One line per step, then an `end` line carrying the success flag.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            for (i, s) in r.steps.iter().enumerate() {
                let line = StoreLine::Step {
                    task_id: r.task_id.clone(),
                    round: r.round,
                    step: i,
                    action_kind: s.action.kind,
                    action_name: s.action.name.clone(),
                    subtask: s.subtask.clone(),
                    subtask_digest: digest(&s.subtask),
                    output_digest: s.output_digest.clone(),
                    input_tokens: s.cost.usage.input_tokens,
                    output_tokens: s.cost.usage.output_tokens,
                    dollars: s.cost.dollars,
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
            let end = StoreLine::End {
                task_id: r.task_id.clone(),
                round: r.round,
                steps: r.steps.len(),
                success: r.success,
            };
            serde_json::to_writer(&mut w, &end)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, ReflectError> {
        let mut store = TrajectoryStore::new();
        let mut pending: Vec<StoredStep> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: StoreLine =
                serde_json::from_str(&line).map_err(|e| ReflectError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            match parsed {
                StoreLine::Step {
                    action_kind,
                    action_name,
                    subtask,
                    output_digest,
                    input_tokens,
                    output_tokens,
                    dollars,
                    ..
                } => pending.push(StoredStep {
                    action: ActionId {
                        kind: action_kind,
                        name: action_name,
                    },
                    subtask,
                    output_digest,
                    cost: StepCost {
                        usage: crate::cost::TokenUsage::new(input_tokens, output_tokens),
                        dollars,
                    },
                }),
                StoreLine::End {
                    task_id,
                    round,
                    steps,
                    success,
                } => {
                    if steps != pending.len() {
                        return Err(ReflectError::Parse {
                            line: i + 1,
                            reason: format!("expected {steps} steps, found {}", pending.len()),
                        });
                    }
                    store.append(TrajectoryRecord {
                        task_id,
                        round,
                        success,
                        steps: std::mem::take(&mut pending),
                    });
                }
            }
        }
        if !pending.is_empty() {
            return Err(ReflectError::Parse {
                line: 0,
                reason: "trailing steps without an end record".into(),
            });
        }
        Ok(store)
    }

    /// Fingerprint of the serialized store.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        digest(&String::from_utf8(buf).expect("utf-8 json"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostStats {
    pub total: Dollars,
    pub count: u64,
    sum_sq_nanos: i128,
}

impl CostStats {
    fn record(&mut self, d: Dollars) {
        self.total += d;
        self.count += 1;
        self.sum_sq_nanos += i128::from(d.nanos()) * i128::from(d.nanos());
    }

    /// Exact arithmetic mean.
    pub fn mean(&self) -> Estimate {
        Estimate::mean(self.total, self.count)
    }

    /// Sample standard deviation in dollars (0 for a single sample).
    pub fn stddev(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let total = self.total.nanos() as f64;
        let var = (self.sum_sq_nanos as f64 - total * total / n) / (n - 1.0);
        var.max(0.0).sqrt() / 1e9
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileRow {
    action_kind: ActionKind,
    action_name: String,
    mean_dollars: String,
    count: u64,
    stddev: f64,
    total_dollars: Dollars,
    sum_sq_nanos: String,
}

/// Learned mean cost per action id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostProfile {
    stats: BTreeMap<ActionId, CostStats>,
}

impl CostProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, id: ActionId, dollars: Dollars) {
        self.stats.entry(id).or_default().record(dollars);
    }

    pub fn get(&self, id: &ActionId) -> Option<&CostStats> {
        self.stats.get(id)
    }

    pub fn mean(&self, id: &ActionId) -> Option<Estimate> {
        self.stats.get(id).map(CostStats::mean)
    }

    pub fn mean_f64(&self, id: &ActionId) -> Option<f64> {
        self.mean(id).map(|m| m.to_f64())
    }

    pub fn contains(&self, id: &ActionId) -> bool {
        self.stats.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &ActionId> {
        self.stats.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ActionId, &CostStats)> {
        self.stats.iter()
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    /// Every logged cost multiplied by `factor`.
    pub fn scaled(&self, factor: i64) -> CostProfile {
        CostProfile {
            stats: self
                .stats
                .iter()
                .map(|(id, s)| {
                    (
                        id.clone(),
                        CostStats {
                            total: s.total.checked_mul_int(factor).expect("scaled total"),
                            count: s.count,
                            sum_sq_nanos: s.sum_sq_nanos * i128::from(factor) * i128::from(factor),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<ProfileRow> = self
            .stats
            .iter()
            .map(|(id, s)| ProfileRow {
                action_kind: id.kind,
                action_name: id.name.clone(),
                mean_dollars: s.mean().to_string(),
                count: s.count,
                stddev: s.stddev(),
                total_dollars: s.total,
                sum_sq_nanos: s.sum_sq_nanos.to_string(),
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<CostProfile, ReflectError> {
        let bad = |reason: String| ReflectError::Parse { line: 0, reason };
        let rows: Vec<ProfileRow> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut stats = BTreeMap::new();
        for r in rows {
            if r.count == 0 {
                return Err(bad(format!("`{}` has zero samples", r.action_name)));
            }
            let sum_sq_nanos = r
                .sum_sq_nanos
                .parse()
                .map_err(|_| bad("bad sum_sq_nanos".into()))?;
            stats.insert(
                ActionId {
                    kind: r.action_kind,
                    name: r.action_name,
                },
                CostStats {
                    total: r.total_dollars,
                    count: r.count,
                    sum_sq_nanos,
                },
            );
        }
        Ok(CostProfile { stats })
    }
}

/// Per-id arithmetic mean over every logged step.
pub fn estimate_costs(store: &TrajectoryStore) -> Result<CostProfile, ReflectError> {
    if store.records.iter().all(|r| r.steps.is_empty()) {
        return Err(ReflectError::EmptyStore);
    }
    let mut p = CostProfile::new();
    for r in &store.records {
        for s in &r.steps {
            p.record(s.action.clone(), s.cost.dollars);
        }
    }
    Ok(p)
}
