//! Speculators: sources of symbolic continuations for a candidate action.

use std::collections::BTreeMap;

use rand::Rng;

use super::PlanError;
use crate::action::{Action, ActionId};
use crate::agents::{ChatClient, ChatMessage, ChatRequest};
use crate::collab::ModuleRegistry;
use crate::cost::{price_cost, CostRecord, PriceSheet};
use crate::rng::StreamKey;

/// Raw rollouts (finish excluded) plus whatever producing them cost.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Rollouts {
    pub sequences: Vec<Vec<ActionId>>,
    pub charges: Vec<CostRecord>,
}

pub trait Speculator: Send + Sync {
    /// `n` continuations, each starting with `candidate.id` and at most
    /// `depth` long. `context` is a rendering of the run so far.
    fn rollouts(
        &self,
        candidate: &Action,
        n: usize,
        depth: usize,
        key: &StreamKey,
        context: &str,
    ) -> Result<Rollouts, PlanError>;
}

/// First-order Markov chain over the action space, fit to logged trajectories
/// with add-α smoothing. Finish is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPrior {
    states: Vec<ActionId>,
    index: BTreeMap<ActionId, usize>,
    rows: Vec<Vec<f64>>,
}

impl TransitionPrior {
    /// `space` must contain finish. Sequences are read in order; ids outside
    /// the space are skipped together with their transitions.
    pub fn fit<'a>(
        space: &[ActionId],
        sequences: impl IntoIterator<Item = &'a [ActionId]>,
        alpha: f64,
    ) -> Self {
        let mut states: Vec<ActionId> = Vec::new();
        for id in space {
            if !states.contains(id) {
                states.push(id.clone());
            }
        }
        if !states.iter().any(ActionId::is_finish) {
            states.push(ActionId::finish());
        }
        let index: BTreeMap<ActionId, usize> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let n = states.len();
        let mut counts = vec![vec![0.0f64; n]; n];
        for seq in sequences {
            for w in seq.windows(2) {
                if let (Some(&a), Some(&b)) = (index.get(&w[0]), index.get(&w[1])) {
                    counts[a][b] += 1.0;
                }
            }
        }
        let fin = index[&ActionId::finish()];
        let rows = counts
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                if i == fin {
                    let mut r = vec![0.0; n];
                    r[fin] = 1.0;
                    return r;
                }
                let smoothed: Vec<f64> = row.iter().map(|c| c + alpha).collect();
                let total: f64 = smoothed.iter().sum();
                if total > 0.0 {
                    smoothed.iter().map(|c| c / total).collect()
                } else {
                    vec![1.0 / n as f64; n]
                }
            })
            .collect();
        TransitionPrior {
            states,
            index,
            rows,
        }
    }

    pub fn states(&self) -> &[ActionId] {
        &self.states
    }

    pub fn probability(&self, from: &ActionId, to: &ActionId) -> Option<f64> {
        Some(self.rows[*self.index.get(from)?][*self.index.get(to)?])
    }

    pub fn row(&self, from: &ActionId) -> Option<&[f64]> {
        self.index.get(from).map(|&i| self.rows[i].as_slice())
    }

    fn sample_next(&self, from: usize, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = &self.rows[from];
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // floating slack: last state with positive mass
        row.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

impl Speculator for TransitionPrior {
    fn rollouts(
        &self,
        candidate: &Action,
        n: usize,
        depth: usize,
        key: &StreamKey,
        _context: &str,
    ) -> Result<Rollouts, PlanError> {
        let start = *self.index.get(&candidate.id).ok_or_else(|| {
            PlanError::Speculation(format!("`{}` is outside the prior", candidate.id))
        })?;
        let mut rng = key.with("markov").rng();
        let mut sequences = Vec::with_capacity(n);
        for _ in 0..n {
            let mut seq = vec![candidate.id.clone()];
            let mut cur = start;
            while !self.states[cur].is_finish() && seq.len() < depth {
                cur = self.sample_next(cur, &mut rng);
                if self.states[cur].is_finish() {
                    break;
                }
                seq.push(self.states[cur].clone());
            }
            sequences.push(seq);
        }
        Ok(Rollouts {
            sequences,
            charges: Vec::new(),
        })
    }
}

/// Asks the orchestrator model for symbolic rollouts:
/// `ROLLOUT: search_then_browse -> reason -> finish`.
#[derive(Debug, Clone)]
pub struct ChatSpeculator {
    client: ChatClient,
    model: String,
    prices: PriceSheet,
    registry: ModuleRegistry,
    max_tokens: u32,
    attempts: usize,
}

impl ChatSpeculator {
    pub fn new(
        client: ChatClient,
        model: impl Into<String>,
        prices: PriceSheet,
        registry: ModuleRegistry,
    ) -> Self {
        ChatSpeculator {
            client,
            model: model.into(),
            prices,
            registry,
            max_tokens: 512,
            attempts: 3,
        }
    }

    fn prompt(&self, candidate: &Action, n: usize, depth: usize, context: &str) -> String {
        let names: Vec<String> = self
            .registry
            .action_ids()
            .iter()
            .map(|a| a.name.clone())
            .collect();
        format!(
            "Progress so far:\n{context}\n\nAvailable actions: {}.\nThe next action will be `{}`. \
             Without solving anything, list {n} plausible continuations of the run as lines of the form \
             `ROLLOUT: {} -> <action> -> ... -> finish`, each with at most {depth} actions before finish.",
            names.join(", "),
            candidate.id.name,
            candidate.id.name
        )
    }
}

/// Parses `ROLLOUT:` lines; unknown names invalidate the line.
pub(crate) fn parse_rollouts(
    text: &str,
    candidate: &ActionId,
    registry: &ModuleRegistry,
    depth: usize,
) -> Vec<Vec<ActionId>> {
    text.lines()
        .filter_map(|line| line.trim().strip_prefix("ROLLOUT:"))
        .filter_map(|rest| {
            let ids: Option<Vec<ActionId>> = rest
                .split("->")
                .map(|n| registry.resolve(n.trim().trim_matches('`')))
                .collect();
            let mut ids = ids?;
            if ids.first() != Some(candidate) {
                ids.insert(0, candidate.clone());
            }
            let mut seq = Vec::new();
            for id in ids {
                if seq.len() >= depth || (id.is_finish() && !seq.is_empty()) {
                    break;
                }
                seq.push(id);
            }
            Some(seq)
        })
        .collect()
}

impl Speculator for ChatSpeculator {
    fn rollouts(
        &self,
        candidate: &Action,
        n: usize,
        depth: usize,
        _key: &StreamKey,
        context: &str,
    ) -> Result<Rollouts, PlanError> {
        let mut out = Rollouts::default();
        for _ in 0..self.attempts {
            let resp = self
                .client
                .complete(&ChatRequest {
                    model: self.model.clone(),
                    messages: vec![ChatMessage::user(self.prompt(candidate, n, depth, context))],
                    max_tokens: self.max_tokens,
                })
                .map_err(|e| PlanError::Speculation(e.to_string()))?;
            out.charges.push(
                price_cost(resp.usage, &self.model, &self.prices)
                    .map_err(|e| PlanError::Speculation(e.to_string()))?,
            );
            out.sequences.extend(parse_rollouts(
                &resp.text,
                &candidate.id,
                &self.registry,
                depth,
            ));
            if out.sequences.len() >= n {
                out.sequences.truncate(n);
                return Ok(out);
            }
        }
        Err(PlanError::Speculation(format!(
            "only {} of {n} rollouts parsed",
            out.sequences.len()
        )))
    }
}
