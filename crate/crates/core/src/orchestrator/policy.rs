//! Orchestrator policies: a seeded rule policy for the synthetic world and a
//! chat-model policy for real backends.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Task;
use crate::action::{Action, ActionId, ActionKind, HistoryEntry, Transcript};
use crate::agents::observe::Observation;
use crate::agents::{
    AgentError, ChatClient, ChatMessage, ChatRequest, LogNormalParams, Role, RoleTokens,
};
use crate::collab::{ModuleRegistry, SONNET};
use crate::cost::TokenUsage;
use crate::grade::answers_match;
use crate::money::Dollars;
use crate::planner::SpeculativeTrajectory;
use crate::reflection::CostProfile;
use crate::rng::StreamKey;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Backend(#[from] AgentError),
    #[error("no usable action after {attempts} attempt(s): {reason}")]
    Unparseable { attempts: usize, reason: String },
    #[error("action space is empty")]
    EmptyActionSpace,
}

/// Budget information shown to budget-aware methods.
#[derive(Debug, Clone)]
pub struct BudgetView<'a> {
    pub remaining: Dollars,
    pub profile: &'a CostProfile,
    pub prompt: String,
}

#[derive(Debug, Clone)]
pub struct PolicyView<'a> {
    pub task: &'a Task,
    pub history: &'a [HistoryEntry],
    pub registry: &'a ModuleRegistry,
    pub budget: Option<BudgetView<'a>>,
    /// Feasible trajectories carried from the previous planning step.
    pub carried: &'a [SpeculativeTrajectory],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub candidates: Vec<Action>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Confirm,
    Revise(Action),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Critique {
    pub verdict: Verdict,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BestEffort {
    pub answer: String,
    pub usage: TokenUsage,
}

pub trait Policy: Send + Sync {
    /// Model whose prices apply to this policy's token usage.
    fn model(&self) -> &str;

    /// `k` candidate actions for the next step.
    fn propose(
        &self,
        view: &PolicyView<'_>,
        k: usize,
        key: &StreamKey,
    ) -> Result<Proposal, PolicyError>;

    fn best_effort(
        &self,
        view: &PolicyView<'_>,
        key: &StreamKey,
    ) -> Result<BestEffort, PolicyError>;

    /// Reviews a finished trajectory: keep the answer, or run one more action.
    fn critique(&self, view: &PolicyView<'_>, key: &StreamKey) -> Result<Critique, PolicyError>;
}

/// Latest `answer` line in the history, if any.
pub fn latest_answer(history: &[HistoryEntry]) -> Option<String> {
    let mut last = None;
    for e in history {
        if e.action.id.kind == ActionKind::Finish {
            last = Some(e.action.subtask.clone());
        } else if let Some(a) = Observation::from_texts([e.output.as_str()]).latest_answer() {
            last = Some(a.to_string());
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    /// Next hop has no candidates yet.
    Seek,
    /// Unread candidates for the next hop exist.
    Pending,
    /// Every hop is evidenced; no answer since.
    Reason,
    /// An answer was produced after the evidence became complete.
    Answered,
}

/// Where a run stands, judged from worker outputs only.
pub fn phase_of(history: &[HistoryEntry]) -> Phase {
    let mut obs = Observation::default();
    let mut complete_at = None;
    let mut answered_at = None;
    for (i, e) in history.iter().enumerate() {
        obs.absorb(&e.output);
        if complete_at.is_none() && obs.complete() {
            complete_at = Some(i);
        }
        if obs.complete()
            && Observation::from_texts([e.output.as_str()])
                .latest_answer()
                .is_some()
        {
            answered_at = Some(i);
        }
    }
    match (complete_at, answered_at) {
        (Some(c), Some(a)) if a >= c => Phase::Answered,
        (Some(_), _) => Phase::Reason,
        _ if !obs.pending().is_empty() => Phase::Pending,
        _ => Phase::Seek,
    }
}

fn phase_of_role(role: Role) -> Phase {
    match role {
        Role::Searcher => Phase::Seek,
        Role::Reader => Phase::Pending,
        Role::Reasoner | Role::Critic => Phase::Reason,
    }
}

/// Phase an action serves, from the role of the agent that acts first.
pub fn action_phase(id: &ActionId, registry: &ModuleRegistry) -> Option<Phase> {
    let strategy = registry.strategy_of(id)?;
    registry
        .agent(strategy.first_agent())
        .map(|a| phase_of_role(a.role))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    /// Model used to price the policy's own token usage.
    pub model: String,
    pub tokens: RoleTokens,
    /// Weight of actions that do not serve the current phase.
    pub off_phase: f64,
    /// Weight of finish once an answer exists.
    pub finish: f64,
    /// Weight of reasoning actions once an answer exists.
    pub verify: f64,
    /// Weight of finish before any answer exists.
    pub early_finish: f64,
    /// Per-action base weights; missing names weigh 1.
    pub base: BTreeMap<String, f64>,
    /// Sensitivity of the cost preference to the remaining budget.
    pub kappa: f64,
    /// Remaining budget at which the policy is cost-neutral.
    pub neutral_remaining: f64,
    pub gamma_max: f64,
    /// Multiplier for actions whose mean cost exceeds the remaining budget.
    pub unaffordable: f64,
    /// Strength of the pull toward actions in carried plans.
    pub carry_boost: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            model: SONNET.to_string(),
            tokens: RoleTokens {
                input: LogNormalParams::median(1500.0, 0.25),
                output: LogNormalParams::median(120.0, 0.3),
            },
            off_phase: 0.02,
            finish: 3.0,
            verify: 0.3,
            early_finish: 0.01,
            base: BTreeMap::new(),
            kappa: 1.0,
            neutral_remaining: 0.08,
            gamma_max: 2.0,
            unaffordable: 0.05,
            carry_boost: 1.0,
        }
    }
}

/// Seeded stochastic policy over the action space. Weights follow the phase of
/// the run; budget-aware views tilt them toward costlier actions when money is
/// plentiful and cheaper ones when it is scarce.
#[derive(Debug, Clone, Default)]
pub struct RulePolicy {
    params: RuleParams,
}

impl RulePolicy {
    pub fn new(params: RuleParams) -> Self {
        RulePolicy { params }
    }

    pub fn params(&self) -> &RuleParams {
        &self.params
    }

    /// Sampling weight of every action id, in action-space order.
    pub fn weights(&self, view: &PolicyView<'_>) -> Vec<(ActionId, f64)> {
        let p = &self.params;
        let phase = phase_of(view.history);
        let ids = view.registry.action_ids();
        let mut weights: Vec<(ActionId, f64, bool)> = ids
            .into_iter()
            .map(|id| {
                let base = p.base.get(&id.name).copied().unwrap_or(1.0);
                let (w, in_phase) = if id.is_finish() {
                    if phase == Phase::Answered {
                        (p.finish, true)
                    } else {
                        (p.early_finish, false)
                    }
                } else {
                    match (phase, action_phase(&id, view.registry)) {
                        (Phase::Answered, Some(Phase::Reason)) => (p.verify * base, true),
                        (ph, Some(ap)) if ph == ap => (base, true),
                        _ => (p.off_phase, false),
                    }
                };
                (id, w, in_phase)
            })
            .collect();

        if let Some(b) = &view.budget {
            let remaining = b.remaining.to_f64();
            let cost = |id: &ActionId| b.profile.mean_f64(id).filter(|c| *c > 0.0);
            let c_ref = weights
                .iter()
                .filter(|(_, _, inp)| *inp)
                .filter_map(|(id, _, _)| cost(id))
                .fold(f64::INFINITY, f64::min);
            let gamma = if remaining > 0.0 {
                (p.kappa * (remaining / p.neutral_remaining).ln()).clamp(-p.gamma_max, p.gamma_max)
            } else {
                -p.gamma_max
            };
            for (id, w, in_phase) in weights.iter_mut() {
                let Some(c) = cost(id) else { continue };
                if *in_phase && c_ref.is_finite() {
                    *w *= (c / c_ref).powf(gamma);
                }
                if c > remaining {
                    *w *= p.unaffordable;
                }
            }
        }

        if !view.carried.is_empty() {
            let n = view.carried.len() as f64;
            for (id, w, _) in weights.iter_mut() {
                let hits = view
                    .carried
                    .iter()
                    .filter(|t| t.actions.contains(id))
                    .count();
                *w *= 1.0 + p.carry_boost * hits as f64 / n;
            }
        }
        weights.into_iter().map(|(id, w, _)| (id, w)).collect()
    }

    fn subtask(&self, id: &ActionId, view: &PolicyView<'_>) -> String {
        if id.is_finish() {
            return latest_answer(view.history).unwrap_or_else(|| "unknown".into());
        }
        let obs = Observation::from_texts(Transcript::from_history(view.history).texts());
        let hop = obs.first_missing_hop() + 1;
        match action_phase(id, view.registry) {
            Some(Phase::Seek) => {
                format!("locate the source for hop {hop} of: {}", view.task.question)
            }
            Some(Phase::Pending) => format!("read the candidate sources for hop {hop}"),
            _ => format!("answer from the gathered evidence: {}", view.task.question),
        }
    }

    fn draw_usage(&self, rng: &mut ChaCha8Rng, outputs: usize) -> TokenUsage {
        let input = self.params.tokens.input.draw(rng);
        let output = (0..outputs.max(1))
            .map(|_| self.params.tokens.output.draw(rng))
            .sum();
        TokenUsage::new(input, output)
    }
}

fn sample_index(weights: &[(ActionId, f64)], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().map(|(_, w)| *w).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, (_, w)) in weights.iter().enumerate() {
        acc += *w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|(_, w)| *w > 0.0).unwrap_or(0)
}

impl Policy for RulePolicy {
    fn model(&self) -> &str {
        &self.params.model
    }

    fn propose(
        &self,
        view: &PolicyView<'_>,
        k: usize,
        key: &StreamKey,
    ) -> Result<Proposal, PolicyError> {
        let weights = self.weights(view);
        if weights.is_empty() {
            return Err(PolicyError::EmptyActionSpace);
        }
        let mut rng = key.rng();
        let usage = self.draw_usage(&mut rng, k);
        let candidates = (0..k.max(1))
            .map(|_| {
                let id = weights[sample_index(&weights, &mut rng)].0.clone();
                let subtask = self.subtask(&id, view);
                Action::new(id, subtask).expect("rule subtasks are non-empty")
            })
            .collect();
        Ok(Proposal { candidates, usage })
    }

    fn best_effort(
        &self,
        view: &PolicyView<'_>,
        key: &StreamKey,
    ) -> Result<BestEffort, PolicyError> {
        let mut rng = key.rng();
        Ok(BestEffort {
            answer: latest_answer(view.history).unwrap_or_else(|| "unknown".into()),
            usage: self.draw_usage(&mut rng, 1),
        })
    }

    /// Confirms once the last two answers agree; otherwise asks for the
    /// phase-appropriate action.
    fn critique(&self, view: &PolicyView<'_>, key: &StreamKey) -> Result<Critique, PolicyError> {
        let mut rng = key.rng();
        let usage = self.draw_usage(&mut rng, 1);
        let answers: Vec<String> = view
            .history
            .iter()
            .flat_map(|e| Observation::from_texts([e.output.as_str()]).answers)
            .collect();
        let agree = answers.len() >= 2
            && answers_match(&answers[answers.len() - 1], &answers[answers.len() - 2]);
        if agree {
            return Ok(Critique {
                verdict: Verdict::Confirm,
                usage,
            });
        }
        let mut weights = self.weights(view);
        weights.retain(|(id, _)| !id.is_finish());
        if phase_of(view.history) == Phase::Answered {
            for (id, w) in weights.iter_mut() {
                if action_phase(id, view.registry) == Some(Phase::Reason) {
                    *w = w.max(1.0);
                }
            }
        }
        if weights.is_empty() {
            return Ok(Critique {
                verdict: Verdict::Confirm,
                usage,
            });
        }
        let id = weights[sample_index(&weights, &mut rng)].0.clone();
        let subtask = self.subtask(&id, view);
        Ok(Critique {
            verdict: Verdict::Revise(Action::new(id, subtask).expect("non-empty")),
            usage,
        })
    }
}

/// Policy backed by a chat model. Candidates are parsed from
/// `ACTION <name>: <subtask>` lines.
#[derive(Debug, Clone)]
pub struct ChatPolicy {
    client: ChatClient,
    model: String,
    max_tokens: u32,
    attempts: usize,
}

impl ChatPolicy {
    pub fn new(client: ChatClient, model: impl Into<String>) -> Self {
        ChatPolicy {
            client,
            model: model.into(),
            max_tokens: 1024,
            attempts: 3,
        }
    }

    fn describe(view: &PolicyView<'_>) -> String {
        let mut lines = Vec::new();
        for a in view.registry.agents() {
            lines.push(format!("- {} (agent, {})", a.name(), a.role.as_str()));
        }
        for m in view.registry.modules() {
            lines.push(format!("- {} (module, {})", m.name, m.signature()));
        }
        lines.push("- finish (subtask is the final answer)".into());
        lines.join("\n")
    }

    fn context(view: &PolicyView<'_>) -> String {
        let mut out = format!("Question: {}\n", view.task.question);
        for e in view.history {
            out.push_str(&format!(
                "\nStep {} - {} ({}):\n{}\n",
                e.step, e.action.id.name, e.action.subtask, e.output
            ));
        }
        if let Some(b) = &view.budget {
            out.push('\n');
            out.push_str(&b.prompt);
            out.push('\n');
        }
        if !view.carried.is_empty() {
            out.push_str("\nPlans that fit the remaining budget:\n");
            for t in view.carried {
                out.push_str(&format!("- {}\n", t.render()));
            }
        }
        out
    }

    fn ask(&self, system: &str, user: String) -> Result<(String, TokenUsage), PolicyError> {
        let resp = self.client.complete(&ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
            max_tokens: self.max_tokens,
        })?;
        Ok((resp.text, resp.usage))
    }
}

const ORCHESTRATOR_SYSTEM: &str = "You coordinate worker agents to answer a question. \
Each turn you choose one action from the list and give it a subtask.";

/// Parses `ACTION <name>: <subtask>` lines against the registry.
pub fn parse_actions(text: &str, registry: &ModuleRegistry) -> Vec<Action> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix("ACTION"))
        .filter_map(|rest| {
            let (name, subtask) = rest.split_once(':')?;
            let id = registry.resolve(name.trim().trim_matches('`'))?;
            Action::new(id, subtask.trim()).ok()
        })
        .collect()
}

impl Policy for ChatPolicy {
    fn model(&self) -> &str {
        &self.model
    }

    fn propose(
        &self,
        view: &PolicyView<'_>,
        k: usize,
        _key: &StreamKey,
    ) -> Result<Proposal, PolicyError> {
        let prompt = format!(
            "{}\nActions:\n{}\n\nPropose {k} candidate next actions, one per line, as `ACTION <name>: <subtask>`.",
            Self::context(view),
            Self::describe(view)
        );
        let mut usage = TokenUsage::ZERO;
        let mut candidates = Vec::new();
        for _ in 0..self.attempts {
            let (text, u) = self.ask(ORCHESTRATOR_SYSTEM, prompt.clone())?;
            usage += u;
            candidates.extend(parse_actions(&text, view.registry));
            if candidates.len() >= k {
                candidates.truncate(k);
                return Ok(Proposal { candidates, usage });
            }
        }
        Err(PolicyError::Unparseable {
            attempts: self.attempts,
            reason: format!("parsed {} of {k} actions", candidates.len()),
        })
    }

    fn best_effort(
        &self,
        view: &PolicyView<'_>,
        _key: &StreamKey,
    ) -> Result<BestEffort, PolicyError> {
        let prompt = format!(
            "{}\nNo more actions can be taken. Reply with your best final answer as `ANSWER: <answer>`.",
            Self::context(view)
        );
        let (text, usage) = self.ask(ORCHESTRATOR_SYSTEM, prompt)?;
        let answer = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("ANSWER:"))
            .map(|a| a.trim().to_string())
            .unwrap_or_else(|| text.trim().to_string());
        Ok(BestEffort { answer, usage })
    }

    fn critique(&self, view: &PolicyView<'_>, _key: &StreamKey) -> Result<Critique, PolicyError> {
        let prompt = format!(
            "{}\nActions:\n{}\n\nReview the trajectory and its answer. Reply `CONFIRM` if the answer is \
             supported, otherwise one line `ACTION <name>: <subtask>` that would fix it.",
            Self::context(view),
            Self::describe(view)
        );
        let (text, usage) = self.ask(ORCHESTRATOR_SYSTEM, prompt)?;
        let verdict = match parse_actions(&text, view.registry)
            .into_iter()
            .find(|a| !a.id.is_finish())
        {
            Some(a) => Verdict::Revise(a),
            None => Verdict::Confirm,
        };
        Ok(Critique { verdict, usage })
    }
}
