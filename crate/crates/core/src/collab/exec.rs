//! Runs strategies against a backend, pricing and charging every invocation.

use std::collections::BTreeMap;

use super::{Aggregator, CollabError, CollaborationModule, Strategy};
use crate::action::{ActionId, ActionKind, Transcript, Turn};
use crate::agents::observe::{Observation, COMPLETION_MARKER};
use crate::agents::{Backend, CallSite};
use crate::collab::ModuleRegistry;
use crate::cost::{price_cost, CostRecord, PriceSheet, SharedLedger, StepCost, TokenUsage};
use crate::money::Dollars;

/// Everything the executor needs besides the strategy itself.
#[derive(Clone, Copy)]
pub struct ExecEnv<'a> {
    pub backend: &'a dyn Backend,
    pub registry: &'a ModuleRegistry,
    pub prices: &'a PriceSheet,
    pub ledger: &'a SharedLedger,
}

/// Outcome of one action. Charges are kept even when the action fails part
/// way, since those calls were already paid for.
#[derive(Debug)]
pub struct Execution {
    pub output: Result<String, CollabError>,
    pub charges: Vec<CostRecord>,
}

impl Execution {
    pub fn usage(&self) -> TokenUsage {
        self.charges.iter().map(|c| c.usage).sum()
    }

    pub fn dollars(&self) -> Dollars {
        self.charges.iter().map(|c| c.dollars).sum()
    }

    pub fn cost(&self) -> StepCost {
        StepCost::of(&self.charges)
    }
}

pub fn execute_action(
    env: ExecEnv<'_>,
    id: &ActionId,
    subtask: &str,
    context: &Transcript,
    site: &CallSite,
) -> Execution {
    let strategy = match id.kind {
        ActionKind::Finish => None,
        _ => env.registry.strategy_of(id),
    };
    match strategy {
        Some(s) => execute_strategy(env, &s, subtask, context, site),
        None => Execution {
            output: Err(CollabError::UnknownAction(id.to_string())),
            charges: Vec::new(),
        },
    }
}

pub fn execute_module(
    env: ExecEnv<'_>,
    module: &CollaborationModule,
    subtask: &str,
    context: &Transcript,
    site: &CallSite,
) -> Execution {
    let mut exec = execute_strategy(env, &module.strategy, subtask, context, site);
    if let Err(e) = exec.output {
        exec.output = Err(match e {
            CollabError::ModuleFailed { reason, .. } => CollabError::ModuleFailed {
                module: module.name.clone(),
                reason,
            },
            other => other,
        });
    }
    exec
}

pub fn execute_strategy(
    env: ExecEnv<'_>,
    strategy: &Strategy,
    subtask: &str,
    context: &Transcript,
    site: &CallSite,
) -> Execution {
    let mut charges = Vec::new();
    let output = run(env, strategy, subtask, context, site, &mut charges);
    Execution { output, charges }
}

fn run(
    env: ExecEnv<'_>,
    strategy: &Strategy,
    subtask: &str,
    context: &Transcript,
    site: &CallSite,
    sink: &mut Vec<CostRecord>,
) -> Result<String, CollabError> {
    match strategy {
        Strategy::Single { agent } => invoke_agent(env, agent, subtask, context, site, sink),
        Strategy::Pipeline { children } => {
            let mut local = context.clone();
            let mut outputs = Vec::with_capacity(children.len());
            for (i, child) in children.iter().enumerate() {
                let out = run(
                    env,
                    child,
                    subtask,
                    &local,
                    &site.child(format!("p{i}")),
                    sink,
                )?;
                local.push(Turn::new(child.first_agent(), out.clone()));
                outputs.push(out);
            }
            Ok(outputs.join("\n"))
        }
        Strategy::Interactive {
            left,
            right,
            max_rounds,
        } => {
            let mut local = context.clone();
            let mut outputs = Vec::new();
            'rounds: for round in 0..*max_rounds {
                for (side, s) in [("l", left), ("r", right)] {
                    let out = run(
                        env,
                        s,
                        subtask,
                        &local,
                        &site.child(format!("i{round}{side}")),
                        sink,
                    )?;
                    let done = out.starts_with(COMPLETION_MARKER);
                    local.push(Turn::new(s.first_agent(), out.clone()));
                    outputs.push(out);
                    if done {
                        break 'rounds;
                    }
                }
            }
            Ok(outputs.join("\n"))
        }
        Strategy::Ensemble {
            n,
            child,
            aggregator,
        } => {
            let branches: Vec<(Result<String, CollabError>, Vec<CostRecord>)> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..*n)
                        .map(|i| {
                            let branch_site = site.child(format!("e{i}"));
                            scope.spawn(move || {
                                let mut local_sink = Vec::new();
                                let r = run(
                                    env,
                                    child,
                                    subtask,
                                    context,
                                    &branch_site,
                                    &mut local_sink,
                                );
                                (r, local_sink)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("ensemble branch panicked"))
                        .collect()
                });
            let mut survivors = Vec::new();
            let mut last_error = None;
            for (r, c) in branches {
                sink.extend(c);
                match r {
                    Ok(out) => survivors.push(out),
                    Err(e) => {
                        log::debug!("ensemble branch dropped: {e}");
                        last_error = Some(e.to_string());
                    }
                }
            }
            if survivors.is_empty() {
                return Err(CollabError::ModuleFailed {
                    module: strategy.signature(),
                    reason: last_error.unwrap_or_else(|| "no branch survived".into()),
                });
            }
            survivors.sort();
            match aggregator {
                Aggregator::Agent(agg) => {
                    let turns = survivors
                        .into_iter()
                        .enumerate()
                        .map(|(i, out)| Turn::new(format!("branch-{i}"), out));
                    let agg_ctx = context.with(turns);
                    invoke_agent(
                        env,
                        agg,
                        &format!("aggregate: {subtask}"),
                        &agg_ctx,
                        &site.child("agg"),
                        sink,
                    )
                }
                Aggregator::MajorityVote => Ok(majority_vote(&survivors)),
            }
        }
    }
}

/// The branch output carrying the most common answer; ties go to the
/// canonically first output. Outputs without answers only win if no branch
/// answered.
fn majority_vote(sorted_outputs: &[String]) -> String {
    let answer_of = |o: &String| {
        Observation::from_texts([o.as_str()])
            .latest_answer()
            .map(str::to_string)
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for o in sorted_outputs {
        if let Some(a) = answer_of(o) {
            *counts.entry(a).or_default() += 1;
        }
    }
    let best = counts.values().copied().max().unwrap_or(0);
    sorted_outputs
        .iter()
        .find(|o| answer_of(o).is_some_and(|a| counts[&a] == best))
        .unwrap_or(&sorted_outputs[0])
        .clone()
}

fn invoke_agent(
    env: ExecEnv<'_>,
    name: &str,
    subtask: &str,
    context: &Transcript,
    site: &CallSite,
    sink: &mut Vec<CostRecord>,
) -> Result<String, CollabError> {
    let agent = env
        .registry
        .agent(name)
        .ok_or_else(|| CollabError::UnknownAction(name.to_string()))?;
    let result = env
        .backend
        .invoke(agent, subtask, context, &site.child(name))?;
    let record = price_cost(result.usage, &agent.model, env.prices)?;
    env.ledger.charge(record.clone());
    sink.push(record);
    Ok(result.output)
}
