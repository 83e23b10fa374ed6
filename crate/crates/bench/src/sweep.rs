//! Method × budget × seed sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use weaver_core::agents::Backend;
use weaver_core::collab::{builtin_registry, ModuleRegistry};
use weaver_core::grade::Judge;
use weaver_core::orchestrator::{
    run_task, LogRecord, Method, Policy, RunConfig, RunEnv, RunError, RunResult, Task,
};
use weaver_core::planner::{Speculator, TransitionPrior};
use weaver_core::reflection::{run_selfplay, CostProfile, SelfPlayConfig, TrajectoryStore};
use weaver_core::{ActionId, Dollars};

use crate::config::BenchConfig;
use crate::metrics::{CellSummary, Outcome};
use crate::tasks::TaskRecord;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub budgets: Vec<Dollars>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.methods.is_empty() || self.budgets.is_empty() || self.seeds.is_empty() {
            return Err(BenchError::Precondition(
                "methods, budgets and seeds must be non-empty".into(),
            ));
        }
        if self.budgets.iter().any(|b| !b.is_positive()) {
            return Err(BenchError::Precondition("budgets must be > 0".into()));
        }
        Ok(())
    }
}

/// What self-play produces and budget-aware methods consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub registry: ModuleRegistry,
    pub profile: CostProfile,
    pub store: TrajectoryStore,
}

impl Artifacts {
    /// The registry offered to module methods: modules without a cost
    /// estimate are dropped, so every method sees the same action space.
    pub fn costed_registry(&self) -> ModuleRegistry {
        self.registry
            .retain_modules(|m| self.profile.contains(&ActionId::module(m.name.clone())))
    }

    /// Transition prior over `registry`, fit to the stored trajectories.
    pub fn prior(&self, registry: &ModuleRegistry, smoothing: f64) -> TransitionPrior {
        let sequences: Vec<Vec<ActionId>> = self
            .store
            .records()
            .iter()
            .map(|r| r.action_ids())
            .collect();
        TransitionPrior::fit(
            &registry.action_ids(),
            sequences.iter().map(Vec::as_slice),
            smoothing,
        )
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        let mut store = Vec::new();
        self.store.write_jsonl(&mut store)?;
        std::fs::write(dir.join("store.jsonl"), store)?;
        std::fs::write(dir.join("profile.json"), self.profile.to_json())?;
        std::fs::write(
            dir.join("modules.json"),
            serde_json::to_string_pretty(&self.registry)?,
        )?;
        Ok(())
    }

    pub fn read(profile: &Path, modules: &Path, store: Option<&Path>) -> Result<Self, BenchError> {
        let profile = CostProfile::from_json(&std::fs::read_to_string(profile)?)?;
        let registry: ModuleRegistry = serde_json::from_str(&std::fs::read_to_string(modules)?)?;
        let registry = registry
            .validated()
            .map_err(|e| BenchError::Precondition(e.to_string()))?;
        let store = match store {
            Some(p) => {
                TrajectoryStore::read_jsonl(std::io::BufReader::new(std::fs::File::open(p)?))?
            }
            None => TrajectoryStore::new(),
        };
        Ok(Artifacts {
            registry,
            profile,
            store,
        })
    }
}

/// Backends shared by every cell. Without a speculator, the planner uses a
/// transition prior fit to the self-play store.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub backend: &'a dyn Backend,
    pub policy: &'a dyn Policy,
    pub speculator: Option<&'a dyn Speculator>,
    /// Consulted for answers that fail exact match.
    pub judge: Option<&'a dyn Judge>,
}

/// Asks `judge` about an answer that failed exact match and, if it agrees,
/// marks the run solved in both the result and its trailer. Judge failures
/// keep the exact-match verdict.
pub fn regrade(run: &mut RunResult, task: &Task, judge: &dyn Judge) {
    let Some(answer) = run.final_answer.as_deref() else {
        return;
    };
    if run.solved {
        return;
    }
    match judge.equivalent(&task.question, answer, &task.answer) {
        Ok(true) => {
            run.solved = true;
            for rec in &mut run.log {
                if let LogRecord::Trailer { solved, .. } = rec {
                    *solved = true;
                }
            }
        }
        Ok(false) => {}
        Err(e) => log::warn!("judge failed on {}: {e}", run.task_id),
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub summary: CellSummary,
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
    /// Task ids used for self-play.
    pub validation: Vec<String>,
    /// Task ids scored.
    pub scored: Vec<String>,
    /// Self-play artifacts per seed, when self-play ran.
    pub artifacts: BTreeMap<u64, Artifacts>,
    /// Cells that could not run.
    pub errors: Vec<String>,
}

impl SweepResult {
    pub fn summaries(&self) -> Vec<CellSummary> {
        self.cells.iter().map(|c| c.summary.clone()).collect()
    }

    pub fn cell(&self, method: &str, budget: Dollars, seed: u64) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.summary.method == method && c.summary.budget == budget && c.summary.seed == seed
        })
    }
}

fn pool(cfg: &BenchConfig) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| BenchError::Precondition(e.to_string()))
}

/// Self-play on `tasks` for one seed, starting from the builtin catalog.
pub fn selfplay(
    tasks: &[Task],
    cfg: &BenchConfig,
    backends: Backends<'_>,
    seed: u64,
) -> Result<Artifacts, BenchError> {
    let start = builtin_registry(cfg.benchmark);
    let sp = SelfPlayConfig {
        rounds: cfg.selfplay.rounds,
        budget_per_task: cfg.selfplay.budget_per_task,
        seed,
        miner: cfg.selfplay.miner.clone(),
        t_max: cfg.t_max,
        meter_orchestrator_tokens: cfg.meter_orchestrator_tokens,
        threads: cfg.parallelism,
    };
    let env = RunEnv {
        backend: backends.backend,
        prices: &cfg.prices,
        policy: backends.policy,
        registry: &start,
        profile: None,
        speculator: None,
    };
    let out = run_selfplay(tasks, &sp, env)?;
    Ok(Artifacts {
        registry: out.registry,
        profile: out.profile,
        store: out.store,
    })
}

/// Runs every (seed, method, budget, task) cell. When `supplied` is `None`
/// and a module method is requested, self-play runs per seed on the first
/// `validation_size` tasks, which are then left out of scoring.
pub fn run_sweep(
    tasks: &[TaskRecord],
    spec: &SweepSpec,
    cfg: &BenchConfig,
    backends: Backends<'_>,
    supplied: Option<&Artifacts>,
) -> Result<SweepResult, BenchError> {
    spec.validate()?;
    if tasks.is_empty() {
        return Err(BenchError::Precondition("no tasks".into()));
    }
    let needs_selfplay = supplied.is_none() && spec.methods.iter().any(Method::uses_modules);
    let (validation, scored): (&[TaskRecord], &[TaskRecord]) = if needs_selfplay {
        if tasks.len() <= cfg.validation_size {
            return Err(BenchError::Precondition(format!(
                "{} tasks leave nothing to score after a validation slice of {}",
                tasks.len(),
                cfg.validation_size
            )));
        }
        tasks.split_at(cfg.validation_size)
    } else {
        (&[], tasks)
    };
    let validation_tasks: Vec<Task> = validation.iter().map(TaskRecord::task).collect();
    let scored_tasks: Vec<Task> = scored.iter().map(TaskRecord::task).collect();
    let pool = pool(cfg)?;
    let base_registry = builtin_registry(cfg.benchmark);

    let mut result = SweepResult {
        cells: Vec::new(),
        validation: validation.iter().map(|t| t.id.clone()).collect(),
        scored: scored.iter().map(|t| t.id.clone()).collect(),
        artifacts: BTreeMap::new(),
        errors: Vec::new(),
    };
    for &seed in &spec.seeds {
        let artifacts = match supplied {
            Some(a) => Some(a.clone()),
            None if needs_selfplay => {
                let a = selfplay(&validation_tasks, cfg, backends, seed)?;
                result.artifacts.insert(seed, a.clone());
                Some(a)
            }
            None => None,
        };
        let registry = artifacts
            .as_ref()
            .map(Artifacts::costed_registry)
            .unwrap_or_else(|| base_registry.clone());
        let prior = artifacts
            .as_ref()
            .map(|a| a.prior(&registry, cfg.planner.smoothing));
        let speculator: Option<&dyn Speculator> = match (backends.speculator, &prior) {
            (Some(s), _) => Some(s),
            (None, Some(p)) => Some(p),
            (None, None) => None,
        };
        for method in &spec.methods {
            for &budget in &spec.budgets {
                let run_cfg = RunConfig {
                    method: *method,
                    budget,
                    t_max: cfg.t_max,
                    planner: cfg.planner.clone(),
                    meter_orchestrator_tokens: cfg.meter_orchestrator_tokens,
                };
                let env = RunEnv {
                    backend: backends.backend,
                    prices: &cfg.prices,
                    policy: backends.policy,
                    registry: &registry,
                    profile: artifacts.as_ref().map(|a| &a.profile),
                    speculator,
                };
                let runs: Result<Vec<RunResult>, _> = pool.install(|| {
                    scored_tasks
                        .par_iter()
                        .map(|t| {
                            let mut run = run_task(t, &run_cfg, env, seed)?;
                            if let Some(judge) = backends.judge {
                                regrade(&mut run, t, judge);
                            }
                            Ok(run)
                        })
                        .collect::<Result<Vec<_>, RunError>>()
                });
                let runs = match runs {
                    Ok(r) => r,
                    Err(e) => {
                        let msg = format!("{method} @ {budget} seed {seed}: {e}");
                        log::error!("{msg}");
                        result.errors.push(msg);
                        continue;
                    }
                };
                let outcomes: Vec<Outcome> = runs.iter().map(Outcome::from).collect();
                let summary = CellSummary::from_outcomes(&method.label(), budget, seed, &outcomes)?;
                log::info!(
                    "{} @ {} seed {}: Acc@B {:.2}, utilization {:.4}",
                    summary.method,
                    budget,
                    seed,
                    summary.acc,
                    summary.utilization
                );
                result.cells.push(Cell { summary, runs });
            }
        }
    }
    Ok(result)
}
