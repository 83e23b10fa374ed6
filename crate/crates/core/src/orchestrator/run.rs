//! The step loop shared by every method, plus best-of-N and iterative
//! verification on top of it.

use std::collections::BTreeMap;

use super::{
    latest_answer, BudgetView, LogRecord, Method, PolicyView, RunConfig, RunEnv, RunError,
    RunResult, Task, Verdict, ORCHESTRATOR_KIND,
};
use crate::action::{Action, ActionKind, HistoryEntry, Transcript};
use crate::agents::observe::Observation;
use crate::agents::CallSite;
use crate::collab::{execute_action, ExecEnv, ModuleRegistry};
use crate::cost::{price_cost, CostRecord, SharedLedger, StepCost, TokenUsage};
use crate::grade::{answers_match, normalize_answer};
use crate::money::Dollars;
use crate::planner::{plan_step, CandidateSet, SpeculativeTrajectory, TransitionPrior};
use crate::reflection::CostProfile;
use crate::rng::{digest, StreamKey};

/// Remaining budget and per-action mean costs, as shown to budget-aware
/// policies. Deterministic for identical inputs.
pub fn render_budget_prompt(remaining: Dollars, profile: &CostProfile) -> String {
    let mut out = format!("Remaining budget: ${}", remaining.format_fixed(4));
    if !profile.is_empty() {
        out.push_str("\nEstimated cost per action:");
        for (id, stats) in profile.iter() {
            out.push_str(&format!(
                "\n- {} {}: ${}",
                id.kind.as_str(),
                id.name,
                stats.mean().round_to_dollars().format_fixed(4)
            ));
        }
    }
    out
}

/// Everything one attempt produced.
#[derive(Debug, Default)]
struct Attempt {
    history: Vec<HistoryEntry>,
    extra: Vec<CostRecord>,
    log: Vec<LogRecord>,
    answer: Option<String>,
    finished: bool,
    /// Ended because the budget ran out.
    budget_cut: bool,
    error: Option<String>,
    last_cost: Dollars,
}

struct Runner<'a> {
    task: &'a Task,
    cfg: &'a RunConfig,
    env: RunEnv<'a>,
    registry: ModuleRegistry,
    ledger: SharedLedger,
    seed: u64,
    label: String,
}

impl<'a> Runner<'a> {
    fn new(
        task: &'a Task,
        cfg: &'a RunConfig,
        env: RunEnv<'a>,
        seed: u64,
    ) -> Result<Self, RunError> {
        cfg.validate()?;
        let registry = if cfg.method.uses_modules() {
            env.registry.clone()
        } else {
            env.registry.retain_modules(|_| false)
        };
        if cfg.method.budget_aware() {
            let profile = env.profile.ok_or_else(|| {
                RunError::InvalidConfig(format!("{} needs a cost profile", cfg.method))
            })?;
            if cfg.method == Method::FutureWeaver {
                if let Some(id) = registry
                    .action_ids()
                    .into_iter()
                    .find(|id| !id.is_finish() && !profile.contains(id))
                {
                    return Err(RunError::MissingProfile(id.to_string()));
                }
                if env.speculator.is_none() && !cfg.planner.uniform_h {
                    return Err(RunError::MissingSpeculator(cfg.method.label()));
                }
            }
        }
        Ok(Runner {
            task,
            cfg,
            env,
            registry,
            ledger: SharedLedger::new(cfg.budget),
            seed,
            label: cfg.method.label(),
        })
    }

    fn base_key(&self, attempt: &str) -> StreamKey {
        StreamKey::new("run")
            .with(self.seed)
            .with(&self.task.id)
            .with(attempt)
    }

    fn view<'v>(
        &'v self,
        history: &'v [HistoryEntry],
        carried: &'v [SpeculativeTrajectory],
    ) -> PolicyView<'v> {
        let budget = match (self.cfg.method.budget_aware(), self.env.profile) {
            (true, Some(profile)) => {
                let remaining = self.ledger.remaining();
                Some(BudgetView {
                    remaining,
                    profile,
                    prompt: render_budget_prompt(remaining, profile),
                })
            }
            _ => None,
        };
        PolicyView {
            task: self.task,
            history,
            registry: &self.registry,
            budget,
            carried,
        }
    }

    /// Prices and charges a policy call when metering is on.
    fn charge_policy(&self, usage: TokenUsage) -> Result<Vec<CostRecord>, String> {
        if !self.cfg.meter_orchestrator_tokens {
            return Ok(Vec::new());
        }
        let rec = price_cost(usage, self.env.policy.model(), self.env.prices)
            .map_err(|e| e.to_string())?;
        self.ledger.charge(rec.clone());
        Ok(vec![rec])
    }

    fn charge_all(&self, records: Vec<CostRecord>) -> Vec<CostRecord> {
        if !self.cfg.meter_orchestrator_tokens {
            return Vec::new();
        }
        for r in &records {
            self.ledger.charge(r.clone());
        }
        records
    }

    #[allow(clippy::too_many_arguments)]
    fn log_step(
        &self,
        log: &mut Vec<LogRecord>,
        step: usize,
        kind: &str,
        name: &str,
        subtask: &str,
        output: &str,
        cost: StepCost,
    ) {
        log.push(LogRecord::Step {
            task_id: self.task.id.clone(),
            method: self.label.clone(),
            budget: self.cfg.budget,
            step,
            action_kind: kind.to_string(),
            action_name: name.to_string(),
            subtask: subtask.to_string(),
            output_digest: digest(output),
            input_tokens: cost.usage.input_tokens,
            output_tokens: cost.usage.output_tokens,
            dollars: cost.dollars,
            remaining_after: self.ledger.remaining(),
        });
    }

    fn exec_env(&self) -> ExecEnv<'_> {
        ExecEnv {
            backend: self.env.backend,
            registry: &self.registry,
            prices: self.env.prices,
            ledger: &self.ledger,
        }
    }

    fn context_text(history: &[HistoryEntry]) -> String {
        history
            .iter()
            .map(|e| format!("{}: {}", e.action.id.name, e.output))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// One ReAct-style pass. Step numbers in the log start at `offset`.
    fn attempt(&self, tag: &str, offset: usize) -> Attempt {
        let base = self.base_key(tag);
        let planning = self.cfg.method == Method::FutureWeaver;
        let k = if planning { self.cfg.planner.k } else { 1 };
        let mut a = Attempt::default();
        let mut carried: Vec<SpeculativeTrajectory> = Vec::new();
        let mut step = 0;
        loop {
            if step >= self.cfg.t_max {
                break;
            }
            if !self.ledger.remaining().is_positive() {
                a.budget_cut = true;
                break;
            }
            let key = base.with(step);
            let proposal = {
                let view = self.view(&a.history, &carried);
                self.env.policy.propose(&view, k, &key.with("policy"))
            };
            let proposal = match proposal {
                Ok(p) if !p.candidates.is_empty() => p,
                Ok(_) => {
                    a.error = Some("policy proposed no action".into());
                    break;
                }
                Err(e) => {
                    a.error = Some(e.to_string());
                    break;
                }
            };
            let mut overhead = match self.charge_policy(proposal.usage) {
                Ok(r) => r,
                Err(e) => {
                    a.error = Some(e);
                    break;
                }
            };
            let chosen: Action = if planning {
                let profile = self.env.profile.expect("checked at construction");
                let set = CandidateSet::new(offset + step, proposal.candidates.clone());
                let speculator = self.env.speculator;
                let planned = match speculator {
                    Some(s) => plan_step(
                        set,
                        s,
                        profile,
                        &self.cfg.planner,
                        self.ledger.remaining(),
                        &key.with("plan"),
                        &Self::context_text(&a.history),
                    ),
                    None => plan_step(
                        set,
                        &TransitionPrior::fit(
                            &[],
                            std::iter::empty::<&[crate::action::ActionId]>(),
                            1.0,
                        ),
                        profile,
                        &self.cfg.planner,
                        self.ledger.remaining(),
                        &key.with("plan"),
                        "",
                    ),
                };
                match planned {
                    Ok(ps) => {
                        overhead.extend(self.charge_all(ps.charges.clone()));
                        carried = ps.selection.carried.clone();
                        ps.chosen().clone()
                    }
                    Err(e) => {
                        a.error = Some(e.to_string());
                        a.extra.extend(overhead);
                        break;
                    }
                }
            } else {
                proposal.candidates[0].clone()
            };
            let names: Vec<&str> = proposal
                .candidates
                .iter()
                .map(|c| c.id.name.as_str())
                .collect();
            let overhead_cost = StepCost::of(&overhead);
            self.log_step(
                &mut a.log,
                offset + step,
                ORCHESTRATOR_KIND,
                if planning { "plan" } else { "propose" },
                &names.join(" | "),
                &chosen.id.to_string(),
                overhead_cost,
            );

            if chosen.id.is_finish() {
                self.log_step(
                    &mut a.log,
                    offset + step,
                    ActionKind::Finish.as_str(),
                    &chosen.id.name,
                    &chosen.subtask,
                    "",
                    StepCost::default(),
                );
                a.answer = Some(chosen.subtask.clone());
                a.finished = true;
                a.last_cost = overhead_cost.dollars;
                a.history.push(HistoryEntry {
                    step: offset + step,
                    action: chosen,
                    output: String::new(),
                    charges: Vec::new(),
                    overhead,
                });
                break;
            }

            let site = CallSite::new(self.task.id.clone(), key.with("act"));
            let context = Transcript::from_history(&a.history);
            let exec = execute_action(
                self.exec_env(),
                &chosen.id,
                &chosen.subtask,
                &context,
                &site,
            );
            let output = match &exec.output {
                Ok(o) => o.clone(),
                Err(e) => {
                    a.error = Some(e.to_string());
                    format!("error: {e}")
                }
            };
            let cost = exec.cost();
            self.log_step(
                &mut a.log,
                offset + step,
                chosen.id.kind.as_str(),
                &chosen.id.name,
                &chosen.subtask,
                &output,
                cost,
            );
            a.last_cost = overhead_cost.dollars + cost.dollars;
            a.history.push(HistoryEntry {
                step: offset + step,
                action: chosen,
                output,
                charges: exec.charges,
                overhead,
            });
            step += 1;
            if a.error.is_some() {
                break;
            }
        }

        if !a.finished {
            if a.error.is_none() && self.ledger.remaining().is_positive() {
                let key = base.with(a.history.len()).with("best_effort");
                let view = self.view(&a.history, &carried);
                match self.env.policy.best_effort(&view, &key) {
                    Ok(b) => match self.charge_policy(b.usage) {
                        Ok(recs) => {
                            let cost = StepCost::of(&recs);
                            self.log_step(
                                &mut a.log,
                                offset + a.history.len(),
                                ORCHESTRATOR_KIND,
                                "best_effort",
                                "",
                                &b.answer,
                                cost,
                            );
                            a.last_cost = cost.dollars;
                            a.extra.extend(recs);
                            a.answer = Some(b.answer);
                        }
                        Err(e) => a.error = Some(e),
                    },
                    Err(e) => a.error = Some(e.to_string()),
                }
            }
            if a.answer.is_none() {
                // out of money or failed: read the answer off the transcript
                a.answer = latest_answer(&a.history);
            }
        }
        a
    }

    fn finish(self, mut parts: Attempt, answer: Option<String>) -> RunResult {
        let solved = answer
            .as_deref()
            .is_some_and(|a| answers_match(a, &self.task.answer));
        let ledger = self.ledger.snapshot();
        let total_cost = ledger.total();
        let overshoot = ledger.overshoot();
        parts.log.push(LogRecord::Trailer {
            task_id: self.task.id.clone(),
            method: self.label.clone(),
            budget: self.cfg.budget,
            seed: self.seed,
            final_answer: answer.clone(),
            solved,
            total_cost,
            overshoot,
        });
        RunResult {
            task_id: self.task.id.clone(),
            method: self.label,
            budget: self.cfg.budget,
            seed: self.seed,
            final_answer: answer,
            solved,
            finished: parts.finished,
            total_cost,
            overshoot,
            steps: parts.history.len(),
            trajectory: parts.history,
            extra_charges: parts.extra,
            last_cost: parts.last_cost,
            error: parts.error,
            log: parts.log,
        }
    }
}

/// Runs one task with the configured method. Configuration errors are
/// returned; failures during the run are recorded in the result.
pub fn run_task(
    task: &Task,
    config: &RunConfig,
    env: RunEnv<'_>,
    seed: u64,
) -> Result<RunResult, RunError> {
    match config.method {
        Method::ReactBestOfN(n) => run_best_of_n(task, n, config, env, seed),
        Method::ReactIterVerify => run_iterative_verification(task, config, env, seed),
        _ => {
            let runner = Runner::new(task, config, env, seed)?;
            let a = runner.attempt("0", 0);
            let answer = a.answer.clone();
            Ok(runner.finish(a, answer))
        }
    }
}

/// Up to `n` independent attempts on one shared ledger; the modal answer of
/// the attempts that ran to completion wins, ties to the earliest.
pub fn run_best_of_n(
    task: &Task,
    n: u32,
    config: &RunConfig,
    env: RunEnv<'_>,
    seed: u64,
) -> Result<RunResult, RunError> {
    if n == 0 {
        return Err(RunError::InvalidConfig("best-of-N needs N ≥ 1".into()));
    }
    let runner = Runner::new(task, config, env, seed)?;
    let mut merged = Attempt::default();
    let mut completed: Vec<String> = Vec::new();
    let mut fallback = None;
    for i in 0..n {
        if !runner.ledger.remaining().is_positive() {
            break;
        }
        let a = runner.attempt(&i.to_string(), merged.history.len());
        let counted = a.finished || (!a.budget_cut && a.error.is_none());
        if let Some(ans) = &a.answer {
            if counted {
                completed.push(ans.clone());
            }
            fallback = Some(ans.clone());
        }
        merged.history.extend(a.history);
        merged.extra.extend(a.extra);
        merged.log.extend(a.log);
        merged.finished |= a.finished;
        merged.last_cost = a.last_cost;
        if a.error.is_some() {
            merged.error = a.error;
            break;
        }
    }
    let answer = modal_answer(&completed).or(fallback);
    Ok(runner.finish(merged, answer))
}

/// Most frequent answer under normalization; ties go to the earliest.
pub(crate) fn modal_answer(answers: &[String]) -> Option<String> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, a) in answers.iter().enumerate() {
        let e = counts.entry(normalize_answer(a)).or_insert((0, i));
        e.0 += 1;
    }
    counts
        .values()
        .max_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)))
        .map(|(_, first)| answers[*first].clone())
}

/// One pass, then critique-and-refine rounds while the remaining budget
/// covers the mean cost of a step so far.
pub fn run_iterative_verification(
    task: &Task,
    config: &RunConfig,
    env: RunEnv<'_>,
    seed: u64,
) -> Result<RunResult, RunError> {
    let runner = Runner::new(task, config, env, seed)?;
    let mut a = runner.attempt("0", 0);
    let base = runner.base_key("0");
    let mut answer = a.answer.clone();
    let mut rounds = 0;
    while rounds < config.t_max && a.error.is_none() && !a.history.is_empty() {
        let remaining = runner.ledger.remaining();
        let mean_step = Dollars::from_nanos(runner.ledger.total().nanos() / a.history.len() as i64);
        if !remaining.is_positive() || remaining < mean_step {
            break;
        }
        let step = a.history.len();
        let key = base.with(step);
        let critique = {
            let view = runner.view(&a.history, &[]);
            runner.env.policy.critique(&view, &key.with("critique"))
        };
        let critique = match critique {
            Ok(c) => c,
            Err(e) => {
                a.error = Some(e.to_string());
                break;
            }
        };
        let overhead = match runner.charge_policy(critique.usage) {
            Ok(r) => r,
            Err(e) => {
                a.error = Some(e);
                break;
            }
        };
        let overhead_cost = StepCost::of(&overhead);
        let action = match critique.verdict {
            Verdict::Revise(action) if !action.id.is_finish() => action,
            _ => {
                runner.log_step(
                    &mut a.log,
                    step,
                    ORCHESTRATOR_KIND,
                    "critique",
                    "confirm",
                    "",
                    overhead_cost,
                );
                a.last_cost = overhead_cost.dollars;
                a.extra.extend(overhead);
                break;
            }
        };
        runner.log_step(
            &mut a.log,
            step,
            ORCHESTRATOR_KIND,
            "critique",
            &action.id.name,
            &action.id.to_string(),
            overhead_cost,
        );
        let site = CallSite::new(task.id.clone(), key.with("act"));
        let context = Transcript::from_history(&a.history);
        let exec = execute_action(
            runner.exec_env(),
            &action.id,
            &action.subtask,
            &context,
            &site,
        );
        let output = match &exec.output {
            Ok(o) => o.clone(),
            Err(e) => {
                a.error = Some(e.to_string());
                format!("error: {e}")
            }
        };
        let cost = exec.cost();
        runner.log_step(
            &mut a.log,
            step,
            action.id.kind.as_str(),
            &action.id.name,
            &action.subtask,
            &output,
            cost,
        );
        if let Some(new) = Observation::from_texts([output.as_str()]).latest_answer() {
            answer = Some(new.to_string());
        }
        a.last_cost = overhead_cost.dollars + cost.dollars;
        a.history.push(HistoryEntry {
            step,
            action,
            output,
            charges: exec.charges,
            overhead,
        });
        rounds += 1;
    }
    Ok(runner.finish(a, answer))
}
