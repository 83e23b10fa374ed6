use std::sync::atomic::{AtomicUsize, Ordering};

use weaver_bench::{
    acc_at_b, emit_reports, persist_logs, run_sweep, summaries_from_logs, synth_tasks, world_for,
    Backends, BenchConfig, BenchError, Outcome, SweepSpec,
};
use weaver_core::agents::AgentError;
use weaver_core::grade::Judge;
use weaver_core::orchestrator::{LogRecord, Method, RuleParams, RulePolicy};
use weaver_core::Dollars;

fn cents(c: &[i64]) -> Vec<Dollars> {
    c.iter().map(|c| Dollars::from_cents(*c)).collect()
}

fn small_config() -> BenchConfig {
    BenchConfig {
        validation_size: 10,
        parallelism: 2,
        world_seed: 4,
        ..BenchConfig::default()
    }
}

#[test]
fn reports_rebuild_from_logs() {
    let cfg = small_config();
    let tasks = synth_tasks(40, 2, &cfg.world);
    let world = world_for(&tasks, cfg.world_seed, &cfg.world);
    let policy = RulePolicy::new(cfg.policy.clone());
    let backends = Backends {
        backend: &world,
        policy: &policy,
        speculator: None,
        judge: None,
    };
    let spec = SweepSpec {
        methods: vec![
            Method::ReactPlain,
            Method::ModulesBudgetUnaware,
            Method::FutureWeaver,
        ],
        budgets: cents(&[10, 40]),
        seeds: vec![0, 1],
    };
    let sweep = run_sweep(&tasks, &spec, &cfg, backends, None).unwrap();
    assert!(sweep.errors.is_empty(), "{:?}", sweep.errors);
    assert_eq!(sweep.cells.len(), 12);

    let dir = tempfile::tempdir().unwrap();
    persist_logs(&sweep, dir.path()).unwrap();
    let mut rebuilt = summaries_from_logs(dir.path()).unwrap();
    let mut direct = sweep.summaries();
    let key = |c: &weaver_bench::CellSummary| (c.method.clone(), c.budget, c.seed);
    rebuilt.sort_by_key(key);
    direct.sort_by_key(key);
    assert_eq!(rebuilt, direct);

    for cell in &sweep.cells {
        let outcomes: Vec<Outcome> = cell.runs.iter().map(Outcome::from).collect();
        assert_eq!(outcomes.len(), 30);
        let solved = cell.runs.iter().filter(|r| r.strict_solved()).count();
        let expected = (solved as f64 * 10000.0 / 30.0).round() / 100.0;
        assert_eq!(
            acc_at_b(&outcomes, cell.summary.budget, true).unwrap(),
            expected
        );
        assert_eq!(cell.summary.acc, expected);
    }

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    emit_reports(&rebuilt, &a).unwrap();
    emit_reports(&direct, &b).unwrap();
    for f in [
        "accuracy.md",
        "accuracy.csv",
        "utilization.csv",
        "summary.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn validation_tasks_are_held_out_only_when_self_play_runs() {
    let cfg = small_config();
    let tasks = synth_tasks(25, 3, &cfg.world);
    let world = world_for(&tasks, cfg.world_seed, &cfg.world);
    let policy = RulePolicy::new(cfg.policy.clone());
    let backends = Backends {
        backend: &world,
        policy: &policy,
        speculator: None,
        judge: None,
    };
    let react = SweepSpec {
        methods: vec![Method::ReactPlain],
        budgets: cents(&[20]),
        seeds: vec![0],
    };
    let sweep = run_sweep(&tasks, &react, &cfg, backends, None).unwrap();
    assert_eq!(sweep.cells[0].runs.len(), 25);
    assert!(sweep.artifacts.is_empty());

    let modules = SweepSpec {
        methods: vec![Method::ReactPlain, Method::ModulesBudgetPrompt],
        ..react
    };
    let sweep = run_sweep(&tasks, &modules, &cfg, backends, None).unwrap();
    assert!(sweep.cells.iter().all(|c| c.runs.len() == 15));
    assert!(sweep.cells[0]
        .runs
        .iter()
        .all(|r| r.task_id.as_str() >= "task-0010"));
    assert_eq!(sweep.artifacts.len(), 1);
}

#[test]
fn empty_sweeps_are_rejected() {
    let cfg = small_config();
    let tasks = synth_tasks(5, 0, &cfg.world);
    let world = world_for(&tasks, cfg.world_seed, &cfg.world);
    let policy = RulePolicy::new(cfg.policy.clone());
    let backends = Backends {
        backend: &world,
        policy: &policy,
        speculator: None,
        judge: None,
    };
    let spec = SweepSpec {
        methods: vec![Method::ReactPlain],
        budgets: Vec::new(),
        seeds: vec![0],
    };
    assert!(matches!(
        run_sweep(&tasks, &spec, &cfg, backends, None),
        Err(BenchError::Precondition(_))
    ));
    assert!(matches!(
        acc_at_b(&[], Dollars::from_cents(10), true),
        Err(BenchError::EmptyResults)
    ));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        emit_reports(&[], dir.path()),
        Err(BenchError::EmptyResults)
    ));
}

#[test]
fn certain_world_accuracy_is_flat_once_budget_covers_a_run() {
    let mut cfg = small_config();
    cfg.world.p_hit = 1.0;
    cfg.world.p_reason = 1.0;
    cfg.policy = RuleParams {
        off_phase: 0.0,
        verify: 0.0,
        early_finish: 0.0,
        ..RuleParams::default()
    };
    let tasks = synth_tasks(20, 5, &cfg.world);
    let world = world_for(&tasks, cfg.world_seed, &cfg.world);
    let policy = RulePolicy::new(cfg.policy.clone());
    let backends = Backends {
        backend: &world,
        policy: &policy,
        speculator: None,
        judge: None,
    };
    let spec = SweepSpec {
        methods: vec![Method::ReactPlain],
        budgets: cents(&[100, 200, 400]),
        seeds: vec![0],
    };
    let sweep = run_sweep(&tasks, &spec, &cfg, backends, None).unwrap();
    let accs: Vec<f64> = sweep.summaries().iter().map(|c| c.acc).collect();
    assert_eq!(accs, [100.0, 100.0, 100.0]);
    let costs: Vec<Dollars> = sweep.summaries().iter().map(|c| c.mean_cost).collect();
    assert!(costs.windows(2).all(|w| w[0] == w[1]));
}

/// Accepts every answer and counts how often it was asked.
struct Lenient(AtomicUsize);

impl Judge for Lenient {
    fn equivalent(&self, _q: &str, _predicted: &str, _gold: &str) -> Result<bool, AgentError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Ok(true)
    }
}

#[test]
fn judge_only_sees_exact_match_failures() {
    let cfg = small_config();
    let tasks = synth_tasks(30, 6, &cfg.world);
    let world = world_for(&tasks, cfg.world_seed, &cfg.world);
    let policy = RulePolicy::new(cfg.policy.clone());
    let spec = SweepSpec {
        methods: vec![Method::ReactPlain],
        budgets: cents(&[20]),
        seeds: vec![0],
    };
    let plain = Backends {
        backend: &world,
        policy: &policy,
        speculator: None,
        judge: None,
    };
    let exact = run_sweep(&tasks, &spec, &cfg, plain, None).unwrap();
    let judge = Lenient(AtomicUsize::new(0));
    let judged = run_sweep(
        &tasks,
        &spec,
        &cfg,
        Backends {
            judge: Some(&judge),
            ..plain
        },
        None,
    )
    .unwrap();
    let runs = &exact.cells[0].runs;
    let wrong_with_answer = runs
        .iter()
        .filter(|r| !r.solved && r.final_answer.is_some())
        .count();
    assert!(wrong_with_answer > 0);
    assert_eq!(judge.0.load(Ordering::SeqCst), wrong_with_answer);
    for (a, b) in runs.iter().zip(&judged.cells[0].runs) {
        assert_eq!(b.solved, a.final_answer.is_some());
        assert_eq!(a.trajectory, b.trajectory);
        let trailer_solved = b.log.iter().find_map(|r| match r {
            LogRecord::Trailer { solved, .. } => Some(*solved),
            LogRecord::Step { .. } => None,
        });
        assert_eq!(trailer_solved, Some(b.solved));
    }
}
