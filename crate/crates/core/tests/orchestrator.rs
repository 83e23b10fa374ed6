use weaver_core::agents::{Role, SyntheticWorld, WorkerAgent, WorldParams};
use weaver_core::collab::{
    builtin_registry, Benchmark, CollaborationModule, ModuleRegistry, Provenance, Strategy, HAIKU,
    SONNET,
};
use weaver_core::orchestrator::{
    run_task, BestEffort, Critique, LogRecord, Method, Policy, PolicyError, PolicyView, Proposal,
    RuleParams, RulePolicy, RunConfig, RunEnv, RunError, RunResult, Task, Verdict,
};
use weaver_core::planner::{PlanError, Rollouts, Speculator};
use weaver_core::reflection::CostProfile;
use weaver_core::rng::StreamKey;
use weaver_core::{price_cost, Action, ActionId, ActionKind, Dollars, PriceSheet, TokenUsage};

fn task(id: &str) -> Task {
    Task {
        id: id.into(),
        question: format!("question {id}"),
        answer: "amber falcon 17".into(),
    }
}

fn world(params: WorldParams, ids: &[&str]) -> SyntheticWorld {
    SyntheticWorld::new(
        5,
        params,
        ids.iter().map(|id| (*id, "amber falcon 17", Some(1))),
    )
}

fn certain_world(ids: &[&str]) -> SyntheticWorld {
    let params = WorldParams {
        p_hit: 1.0,
        p_reason: 1.0,
        ..WorldParams::default()
    };
    world(params, ids)
}

fn focused_policy() -> RulePolicy {
    RulePolicy::new(RuleParams {
        off_phase: 0.0,
        verify: 0.0,
        early_finish: 0.0,
        ..RuleParams::default()
    })
}

fn env<'a>(
    backend: &'a SyntheticWorld,
    prices: &'a PriceSheet,
    policy: &'a dyn Policy,
    registry: &'a ModuleRegistry,
) -> RunEnv<'a> {
    RunEnv {
        backend,
        prices,
        policy,
        registry,
        profile: None,
        speculator: None,
    }
}

fn names(r: &RunResult) -> Vec<&str> {
    r.trajectory
        .iter()
        .map(|e| e.action.id.name.as_str())
        .collect()
}

#[test]
fn certain_world_solves_in_four_steps() {
    let w = certain_world(&["t"]);
    let prices = PriceSheet::reference();
    let policy = focused_policy();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let cfg = RunConfig::new(Method::ReactPlain, Dollars::from_cents(100));
    let r = run_task(&task("t"), &cfg, env(&w, &prices, &policy, &registry), 0).unwrap();
    assert_eq!(names(&r), ["search", "browse", "reason", "finish"]);
    assert!(r.solved && r.finished && !r.overshoot);
    assert_eq!(r.final_answer.as_deref(), Some("amber falcon 17"));
    assert!(r.error.is_none());
}

#[test]
fn react_never_uses_modules() {
    let w = world(WorldParams::default(), &["a", "b", "c"]);
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let cfg = RunConfig::new(Method::ReactPlain, Dollars::from_cents(40));
    for id in ["a", "b", "c"] {
        let r = run_task(&task(id), &cfg, env(&w, &prices, &policy, &registry), 1).unwrap();
        assert!(r
            .trajectory
            .iter()
            .all(|e| e.action.id.kind != ActionKind::Module));
    }
}

fn step_records(r: &RunResult) -> Vec<(Dollars, Dollars)> {
    r.log
        .iter()
        .filter_map(|rec| match rec {
            LogRecord::Step {
                dollars,
                remaining_after,
                ..
            } => Some((*dollars, *remaining_after)),
            LogRecord::Trailer { .. } => None,
        })
        .collect()
}

#[test]
fn log_tracks_the_ledger() {
    let w = world(WorldParams::default(), &["t"]);
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let budget = Dollars::from_cents(30);
    let cfg = RunConfig::new(Method::ModulesBudgetUnaware, budget);
    let r = run_task(&task("t"), &cfg, env(&w, &prices, &policy, &registry), 2).unwrap();
    let steps = step_records(&r);
    assert!(!steps.is_empty());
    let mut spent = Dollars::ZERO;
    let mut prev = budget;
    for (dollars, remaining) in &steps {
        spent += *dollars;
        assert_eq!(*remaining, budget - spent);
        if dollars.is_positive() {
            assert!(*remaining < prev);
        }
        prev = *remaining;
    }
    assert_eq!(spent, r.total_cost);
    let trailers: Vec<_> = r
        .log
        .iter()
        .filter(|rec| matches!(rec, LogRecord::Trailer { .. }))
        .collect();
    assert_eq!(trailers.len(), 1);
    assert!(matches!(r.log.last(), Some(LogRecord::Trailer { .. })));
    match trailers[0] {
        LogRecord::Trailer {
            total_cost,
            solved,
            overshoot,
            ..
        } => {
            assert_eq!(*total_cost, r.total_cost);
            assert_eq!(*solved, r.solved);
            assert_eq!(*overshoot, r.overshoot);
        }
        LogRecord::Step { .. } => unreachable!(),
    }
}

#[test]
fn tiny_budget_overshoots_by_at_most_one_step() {
    let w = world(WorldParams::default(), &["t"]);
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let budget = Dollars::from_nanos(1_000);
    let cfg = RunConfig::new(Method::ReactPlain, budget);
    let r = run_task(&task("t"), &cfg, env(&w, &prices, &policy, &registry), 0).unwrap();
    assert!(r.overshoot);
    assert!(r.total_cost > budget);
    assert!(r.total_cost - r.last_cost <= budget);
    assert_eq!(r.steps, 1);
}

#[test]
fn zero_budget_is_rejected() {
    let w = world(WorldParams::default(), &["t"]);
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let cfg = RunConfig::new(Method::ReactPlain, Dollars::ZERO);
    let err = run_task(&task("t"), &cfg, env(&w, &prices, &policy, &registry), 0).unwrap_err();
    assert!(matches!(err, RunError::InvalidConfig(_)));
}

#[test]
fn backend_failure_is_recorded() {
    let w = world(WorldParams::default(), &["other"]);
    let prices = PriceSheet::reference();
    let policy = focused_policy();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let cfg = RunConfig::new(Method::ReactPlain, Dollars::from_cents(20));
    let r = run_task(
        &task("missing"),
        &cfg,
        env(&w, &prices, &policy, &registry),
        0,
    )
    .unwrap();
    assert!(r.error.as_deref().unwrap().contains("missing"));
    assert!(!r.solved);
    assert!(matches!(r.log.last(), Some(LogRecord::Trailer { .. })));
}

#[test]
fn runs_are_reproducible() {
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    for method in [
        Method::ReactPlain,
        Method::ReactIterVerify,
        Method::ReactBestOfN(3),
        Method::ModulesBudgetUnaware,
    ] {
        let cfg = RunConfig::new(method, Dollars::from_cents(20));
        let a = run_task(
            &task("t"),
            &cfg,
            env(
                &world(WorldParams::default(), &["t"]),
                &prices,
                &policy,
                &registry,
            ),
            9,
        )
        .unwrap();
        let b = run_task(
            &task("t"),
            &cfg,
            env(
                &world(WorldParams::default(), &["t"]),
                &prices,
                &policy,
                &registry,
            ),
            9,
        )
        .unwrap();
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn best_of_one_matches_plain() {
    let w = world(WorldParams::default(), &["t"]);
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let plain = RunConfig::new(Method::ReactPlain, Dollars::from_cents(20));
    let best = RunConfig::new(Method::ReactBestOfN(1), Dollars::from_cents(20));
    for seed in 0..5 {
        let a = run_task(
            &task("t"),
            &plain,
            env(&w, &prices, &policy, &registry),
            seed,
        )
        .unwrap();
        let b = run_task(
            &task("t"),
            &best,
            env(&w, &prices, &policy, &registry),
            seed,
        )
        .unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.final_answer, b.final_answer);
        assert_eq!(a.total_cost, b.total_cost);
    }
}

#[test]
fn best_of_n_shares_one_ledger() {
    let w = world(WorldParams::default(), &["t"]);
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let budget = Dollars::from_cents(20);
    let cfg = RunConfig::new(Method::ReactBestOfN(4), budget);
    let r = run_task(&task("t"), &cfg, env(&w, &prices, &policy, &registry), 3).unwrap();
    let steps: Vec<usize> = r.trajectory.iter().map(|e| e.step).collect();
    assert_eq!(steps, (0..steps.len()).collect::<Vec<_>>());
    assert!(r.total_cost - r.last_cost <= budget);
}

#[test]
fn budget_aware_methods_need_a_profile() {
    let w = world(WorldParams::default(), &["t"]);
    let prices = PriceSheet::reference();
    let policy = RulePolicy::default();
    let registry = builtin_registry(Benchmark::GaiaLike);
    for method in [Method::ModulesBudgetPrompt, Method::FutureWeaver] {
        let cfg = RunConfig::new(method, Dollars::from_cents(20));
        assert!(run_task(&task("t"), &cfg, env(&w, &prices, &policy, &registry), 0).is_err());
    }
    let mut profile = CostProfile::new();
    profile.record(ActionId::agent("search"), Dollars::from_cents(1));
    let env = RunEnv {
        profile: Some(&profile),
        ..env(&w, &prices, &policy, &registry)
    };
    let cfg = RunConfig::new(Method::FutureWeaver, Dollars::from_cents(20));
    assert!(matches!(
        run_task(&task("t"), &cfg, env, 0).unwrap_err(),
        RunError::MissingProfile(_)
    ));
}

/// Proposes a fixed first step, then finish.
struct Scripted {
    first: Vec<Action>,
}

impl Policy for Scripted {
    fn model(&self) -> &str {
        SONNET
    }

    fn propose(
        &self,
        view: &PolicyView<'_>,
        k: usize,
        _key: &StreamKey,
    ) -> Result<Proposal, PolicyError> {
        let candidates = if view.history.is_empty() {
            self.first.clone()
        } else {
            vec![Action::finish("amber falcon 17").unwrap(); k]
        };
        Ok(Proposal {
            candidates,
            usage: TokenUsage::new(100, 10),
        })
    }

    fn best_effort(
        &self,
        _view: &PolicyView<'_>,
        _key: &StreamKey,
    ) -> Result<BestEffort, PolicyError> {
        Ok(BestEffort {
            answer: "unknown".into(),
            usage: TokenUsage::ZERO,
        })
    }

    fn critique(&self, _view: &PolicyView<'_>, _key: &StreamKey) -> Result<Critique, PolicyError> {
        Ok(Critique {
            verdict: Verdict::Confirm,
            usage: TokenUsage::ZERO,
        })
    }
}

/// Every rollout is the candidate alone.
struct Echo;

impl Speculator for Echo {
    fn rollouts(
        &self,
        candidate: &Action,
        n: usize,
        _depth: usize,
        _key: &StreamKey,
        _context: &str,
    ) -> Result<Rollouts, PlanError> {
        Ok(Rollouts {
            sequences: vec![vec![candidate.id.clone()]; n],
            charges: Vec::new(),
        })
    }
}

#[test]
fn planner_picks_the_only_affordable_candidate() {
    let w = world(WorldParams::default(), &["t"]);
    let prices = PriceSheet::reference();
    let mut registry = ModuleRegistry::with_agents([
        WorkerAgent::new("search", Role::Searcher, HAIKU),
        WorkerAgent::new("browse", Role::Reader, HAIKU),
        WorkerAgent::new("reason", Role::Reasoner, SONNET),
    ])
    .unwrap();
    registry
        .add_module(CollaborationModule::new(
            "m",
            Strategy::pipeline(vec![Strategy::single("search"), Strategy::single("browse")]),
            Provenance::Builtin,
        ))
        .unwrap();
    let mut profile = CostProfile::new();
    for (id, cents) in [
        (ActionId::agent("search"), 100),
        (ActionId::agent("browse"), 100),
        (ActionId::agent("reason"), 100),
        (ActionId::module("m"), 1),
    ] {
        profile.record(id, Dollars::from_cents(cents));
    }
    // the module is last and in the minority, so self-consistency alone would not pick it
    let policy = Scripted {
        first: vec![
            Action::new(ActionId::agent("reason"), "q").unwrap(),
            Action::new(ActionId::agent("reason"), "q").unwrap(),
            Action::new(ActionId::module("m"), "q").unwrap(),
        ],
    };
    let env = RunEnv {
        backend: &w,
        prices: &prices,
        policy: &policy,
        registry: &registry,
        profile: Some(&profile),
        speculator: Some(&Echo),
    };
    let mut cfg = RunConfig::new(Method::FutureWeaver, Dollars::from_cents(10));
    cfg.meter_orchestrator_tokens = false;
    cfg.planner.w_g = 0.1;
    let r = run_task(&task("t"), &cfg, env, 0).unwrap();
    assert_eq!(r.trajectory[0].action.id, ActionId::module("m"));
    assert!(r.trajectory.last().unwrap().action.id.is_finish());
    assert!(r.trajectory.iter().all(|e| e.overhead.is_empty()));

    // with the module priced out, nothing fits and self-consistency decides
    profile.record(ActionId::module("m"), Dollars::from_cents(1000));
    let env = RunEnv {
        backend: &w,
        prices: &prices,
        policy: &policy,
        registry: &registry,
        profile: Some(&profile),
        speculator: Some(&Echo),
    };
    let r = run_task(&task("t"), &cfg, env, 0).unwrap();
    assert_eq!(r.trajectory[0].action.id, ActionId::agent("reason"));
}

#[test]
fn metered_planning_is_charged_as_overhead() {
    let w = certain_world(&["t"]);
    let prices = PriceSheet::reference();
    let registry = builtin_registry(Benchmark::GaiaLike);
    let mut profile = CostProfile::new();
    for id in registry
        .action_ids()
        .into_iter()
        .filter(|id| !id.is_finish())
    {
        profile.record(id, Dollars::from_cents(1));
    }
    let policy = Scripted {
        first: vec![Action::new(ActionId::agent("search"), "q").unwrap()],
    };
    let env = RunEnv {
        backend: &w,
        prices: &prices,
        policy: &policy,
        registry: &registry,
        profile: Some(&profile),
        speculator: Some(&Echo),
    };
    let cfg = RunConfig::new(Method::FutureWeaver, Dollars::from_cents(50));
    let r = run_task(&task("t"), &cfg, env, 0).unwrap();
    assert!(r.trajectory.iter().all(|e| e.overhead.len() == 1));
    let per_call = price_cost(TokenUsage::new(100, 10), SONNET, &prices).unwrap();
    assert_eq!(r.trajectory[0].overhead[0], per_call);
    let sum: Dollars = r.all_charges().map(|c| c.dollars).sum();
    assert_eq!(sum, r.total_cost);
}
