//! Rounds of budget-unaware execution on validation tasks, growing the
//! trajectory store, the cost profile and the module registry.

use serde::{Deserialize, Serialize};

use super::{
    estimate_costs, mine_patterns, CostProfile, MinerParams, ReflectError, TrajectoryRecord,
    TrajectoryStore,
};
use crate::collab::{CollaborationModule, ModuleRegistry};
use crate::money::Dollars;
use crate::orchestrator::{run_task, Method, RunConfig, RunEnv, RunResult, Task};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfPlayConfig {
    pub rounds: u32,
    pub budget_per_task: Dollars,
    pub seed: u64,
    pub miner: MinerParams,
    pub t_max: usize,
    pub meter_orchestrator_tokens: bool,
    /// Worker threads per round; 1 runs tasks in order on the caller.
    pub threads: usize,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        SelfPlayConfig {
            rounds: 5,
            budget_per_task: Dollars::from_cents(100),
            seed: 0,
            miner: MinerParams::default(),
            t_max: 10,
            meter_orchestrator_tokens: true,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfPlayOutcome {
    pub store: TrajectoryStore,
    pub profile: CostProfile,
    /// Modules registered during self-play, in round order.
    pub new_modules: Vec<CollaborationModule>,
    /// The input registry plus `new_modules`.
    pub registry: ModuleRegistry,
}

/// Seed used for round `round`.
pub fn round_seed(seed: u64, round: u32) -> u64 {
    let bytes = StreamKey::new("selfplay").with(seed).with(round).seed();
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

fn run_round(
    tasks: &[Task],
    cfg: &RunConfig,
    env: RunEnv<'_>,
    seed: u64,
    threads: usize,
) -> Result<Vec<RunResult>, ReflectError> {
    let run =
        |t: &Task| run_task(t, cfg, env, seed).map_err(|e| ReflectError::Invalid(e.to_string()));
    if threads <= 1 {
        return tasks.iter().map(run).collect();
    }
    let chunk = tasks.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = tasks
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(tasks.len());
        for h in handles {
            out.extend(h.join().expect("self-play worker panicked")?);
        }
        Ok(out)
    })
}

/// Runs `config.rounds` rounds over `tasks`. `env.registry` is the starting
/// registry; `env.profile` and `env.speculator` are ignored.
pub fn run_selfplay(
    tasks: &[Task],
    config: &SelfPlayConfig,
    env: RunEnv<'_>,
) -> Result<SelfPlayOutcome, ReflectError> {
    if config.rounds == 0 {
        return Err(ReflectError::Invalid("rounds must be ≥ 1".into()));
    }
    if tasks.is_empty() {
        return Err(ReflectError::Invalid("no self-play tasks".into()));
    }
    let mut run_cfg = RunConfig::new(Method::ModulesBudgetUnaware, config.budget_per_task);
    run_cfg.t_max = config.t_max;
    run_cfg.meter_orchestrator_tokens = config.meter_orchestrator_tokens;
    run_cfg
        .validate()
        .map_err(|e| ReflectError::Invalid(e.to_string()))?;

    let mut registry = env.registry.clone();
    let mut store = TrajectoryStore::new();
    let mut profile = CostProfile::new();
    let mut new_modules = Vec::new();
    for round in 0..config.rounds {
        let round_env = RunEnv {
            registry: &registry,
            profile: None,
            speculator: None,
            ..env
        };
        let results = run_round(
            tasks,
            &run_cfg,
            round_env,
            round_seed(config.seed, round),
            config.threads,
        )?;
        for r in &results {
            if let Some(e) = &r.error {
                log::warn!("self-play task {} failed in round {round}: {e}", r.task_id);
            }
            let success = r.solved && r.error.is_none();
            store.append(TrajectoryRecord::from_history(
                &r.task_id,
                round,
                success,
                &r.trajectory,
            ));
        }
        profile = match estimate_costs(&store) {
            Ok(p) => p,
            Err(ReflectError::EmptyStore) => CostProfile::new(),
            Err(e) => return Err(e),
        };
        let best = mine_patterns(&store, &registry, &config.miner)
            .into_iter()
            .next();
        if let Some(found) = best {
            match registry.add_module(found.module.clone()) {
                Ok(()) => new_modules.push(found.module),
                Err(e) => log::info!("round {round}: mined module not registered: {e}"),
            }
        }
    }
    Ok(SelfPlayOutcome {
        store,
        profile,
        new_modules,
        registry,
    })
}
