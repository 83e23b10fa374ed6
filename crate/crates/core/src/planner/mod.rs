//! Dual-level action selection.
//!
//! Each step scores K sampled candidates with a short-term self-consistency
//! gain `g` and a long-term budget-feasibility gain `h`, picks the argmax of
//! `w_g·g + w_h·h`, and carries the surviving speculative trajectories into
//! the next step's sampling.

mod prior;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionId};
use crate::cost::CostRecord;
use crate::money::{Dollars, Estimate};
use crate::reflection::CostProfile;
use crate::rng::StreamKey;

pub use prior::{ChatSpeculator, Rollouts, Speculator, TransitionPrior};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no learned cost for action `{0}`")]
    MissingCostProfile(ActionId),
    #[error("speculation failed: {0}")]
    Speculation(String),
    #[error("policy failed: {0}")]
    PolicyFailure(String),
    #[error("invalid planner input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Candidates sampled per step.
    pub k: usize,
    pub n_rollouts: usize,
    pub depth_limit: usize,
    /// Add-α smoothing of the transition prior.
    pub smoothing: f64,
    pub w_g: f64,
    pub w_h: f64,
    /// Replace `h` by 1/K and skip speculation entirely.
    pub uniform_h: bool,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            k: 3,
            n_rollouts: 5,
            depth_limit: 6,
            smoothing: 1.0,
            w_g: 1.0,
            w_h: 1.0,
            uniform_h: false,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.k == 0 || self.n_rollouts == 0 || self.depth_limit == 0 {
            return Err(PlanError::Invalid(
                "k, n_rollouts and depth_limit must be ≥ 1".into(),
            ));
        }
        if !(self.smoothing >= 0.0 && self.w_g >= 0.0 && self.w_h >= 0.0) {
            return Err(PlanError::Invalid(
                "smoothing and weights must be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub step: usize,
    pub candidates: Vec<Action>,
}

impl CandidateSet {
    pub fn new(step: usize, candidates: Vec<Action>) -> Self {
        assert!(!candidates.is_empty(), "candidate set must be non-empty");
        CandidateSet { step, candidates }
    }

    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn ids(&self) -> Vec<ActionId> {
        self.candidates.iter().map(|a| a.id.clone()).collect()
    }
}

/// A never-executed continuation with its estimated cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeculativeTrajectory {
    pub actions: Vec<ActionId>,
    pub estimated_cost: Estimate,
}

impl SpeculativeTrajectory {
    /// Prices `actions` with profile means. Finish without a profile entry
    /// costs nothing.
    pub fn priced(actions: Vec<ActionId>, profile: &CostProfile) -> Result<Self, PlanError> {
        let mut cost = Estimate::zero();
        for id in &actions {
            match profile.mean(id) {
                Some(m) => cost += &m,
                None if id.is_finish() => {}
                None => return Err(PlanError::MissingCostProfile(id.clone())),
            }
        }
        Ok(SpeculativeTrajectory {
            actions,
            estimated_cost: cost,
        })
    }

    pub fn render(&self) -> String {
        let names: Vec<&str> = self.actions.iter().map(|a| a.name.as_str()).collect();
        format!(
            "{} (~${:.4})",
            names.join(" -> "),
            self.estimated_cost.to_f64()
        )
    }
}

/// Candidate index → its trajectories that fit the budget.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeasibleSet {
    pub per_candidate: BTreeMap<usize, Vec<SpeculativeTrajectory>>,
}

impl FeasibleSet {
    pub fn counts(&self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|i| self.per_candidate.get(&i).map_or(0, Vec::len))
            .collect()
    }

    /// All trajectories, in candidate order.
    pub fn union(&self) -> Vec<SpeculativeTrajectory> {
        self.per_candidate.values().flatten().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.per_candidate.values().all(Vec::is_empty)
    }
}

/// `g(i)` = share of candidates with the same action id as candidate `i`.
pub fn short_term_gain(candidates: &CandidateSet) -> Vec<f64> {
    let ids = candidates.ids();
    let k = ids.len();
    let mut counts: BTreeMap<&ActionId, usize> = BTreeMap::new();
    for id in &ids {
        *counts.entry(id).or_default() += 1;
    }
    ids.iter().map(|id| counts[id] as f64 / k as f64).collect()
}

/// Normalized feasible counts; uniform when nothing is feasible.
pub fn long_term_gain(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        let k = counts.len().max(1);
        return vec![1.0 / k as f64; counts.len()];
    }
    counts.iter().map(|c| *c as f64 / total as f64).collect()
}

/// Boundary-inclusive: keeps trajectories with cost ≤ `remaining`.
pub fn filter_feasible(
    trajectories: &[SpeculativeTrajectory],
    remaining: Dollars,
) -> Vec<SpeculativeTrajectory> {
    trajectories
        .iter()
        .filter(|t| t.estimated_cost.le_dollars(remaining))
        .cloned()
        .collect()
}

/// Rolls out from `candidate` with the speculator and prices every rollout.
pub fn speculate(
    candidate: &Action,
    speculator: &dyn Speculator,
    profile: &CostProfile,
    n_rollouts: usize,
    depth_limit: usize,
    key: &StreamKey,
    context: &str,
) -> Result<(Vec<SpeculativeTrajectory>, Vec<CostRecord>), PlanError> {
    if n_rollouts == 0 || depth_limit == 0 {
        return Err(PlanError::Invalid(
            "n_rollouts and depth_limit must be ≥ 1".into(),
        ));
    }
    let rollouts = speculator.rollouts(candidate, n_rollouts, depth_limit, key, context)?;
    let trajectories = rollouts
        .sequences
        .into_iter()
        .map(|seq| SpeculativeTrajectory::priced(seq, profile))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((trajectories, rollouts.charges))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub f: Vec<f64>,
    /// Union of every candidate's feasible trajectories.
    pub carried: Vec<SpeculativeTrajectory>,
}

const TIE_EPS: f64 = 1e-12;

/// Argmax of `w_g·g + w_h·h`; ties go to the lower mean cost, then the lower
/// index. Candidates without a profile entry lose cost ties.
pub fn select_action(
    candidates: &CandidateSet,
    g: &[f64],
    h: &[f64],
    feasible: &FeasibleSet,
    profile: &CostProfile,
    w_g: f64,
    w_h: f64,
) -> Selection {
    let k = candidates.k();
    assert!(
        g.len() == k && h.len() == k,
        "score vectors must have length K"
    );
    let f: Vec<f64> = (0..k).map(|i| w_g * g[i] + w_h * h[i]).collect();
    let cost = |i: usize| {
        let id = &candidates.candidates[i].id;
        profile
            .mean(id)
            .or_else(|| id.is_finish().then(Estimate::zero))
    };
    let mut best = 0;
    for i in 1..k {
        if f[i] > f[best] + TIE_EPS {
            best = i;
        } else if (f[i] - f[best]).abs() <= TIE_EPS {
            let cheaper = match (cost(i), cost(best)) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                _ => false,
            };
            if cheaper {
                best = i;
            }
        }
    }
    Selection {
        index: best,
        f,
        carried: feasible.union(),
    }
}

/// Everything computed while choosing one action.
#[derive(Debug, Clone)]
pub struct PlanStep {
    pub candidates: CandidateSet,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub speculated: Vec<Vec<SpeculativeTrajectory>>,
    pub feasible: FeasibleSet,
    pub selection: Selection,
    /// Priced speculator calls (none in simulator mode).
    pub charges: Vec<CostRecord>,
}

impl PlanStep {
    pub fn chosen(&self) -> &Action {
        &self.candidates.candidates[self.selection.index]
    }
}

/// Scores a sampled candidate set against the remaining budget. Performs no
/// worker invocations.
pub fn plan_step(
    candidates: CandidateSet,
    speculator: &dyn Speculator,
    profile: &CostProfile,
    params: &PlannerParams,
    remaining: Dollars,
    key: &StreamKey,
    context: &str,
) -> Result<PlanStep, PlanError> {
    params.validate()?;
    let k = candidates.k();
    let g = short_term_gain(&candidates);
    if params.uniform_h {
        let h = vec![1.0 / k as f64; k];
        let feasible = FeasibleSet::default();
        let mut selection = select_action(
            &candidates,
            &g,
            &h,
            &feasible,
            profile,
            params.w_g,
            params.w_h,
        );
        selection.carried.clear();
        return Ok(PlanStep {
            candidates,
            g,
            h,
            speculated: Vec::new(),
            feasible,
            selection,
            charges: Vec::new(),
        });
    }
    let mut speculated = Vec::with_capacity(k);
    let mut charges = Vec::new();
    let mut feasible = FeasibleSet::default();
    for (i, c) in candidates.candidates.iter().enumerate() {
        let (trajs, c_charges) = speculate(
            c,
            speculator,
            profile,
            params.n_rollouts,
            params.depth_limit,
            &key.with(format!("cand{i}")),
            context,
        )?;
        charges.extend(c_charges);
        feasible
            .per_candidate
            .insert(i, filter_feasible(&trajs, remaining));
        speculated.push(trajs);
    }
    let h = long_term_gain(&feasible.counts(k));
    let selection = select_action(
        &candidates,
        &g,
        &h,
        &feasible,
        profile,
        params.w_g,
        params.w_h,
    );
    Ok(PlanStep {
        candidates,
        g,
        h,
        speculated,
        feasible,
        selection,
        charges,
    })
}
