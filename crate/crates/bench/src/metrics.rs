//! Accuracy under a budget and per-cell aggregates.

use serde::{Deserialize, Serialize};
use weaver_core::orchestrator::{LogRecord, RunResult};
use weaver_core::{Dollars, Estimate};

use crate::BenchError;

/// What the metrics need from one finished run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub task_id: String,
    pub solved: bool,
    pub total_cost: Dollars,
}

impl From<&RunResult> for Outcome {
    fn from(r: &RunResult) -> Self {
        Outcome {
            task_id: r.task_id.clone(),
            solved: r.solved,
            total_cost: r.total_cost,
        }
    }
}

/// Outcomes from the trailer records of a trajectory log.
pub fn outcomes_from_log(records: &[LogRecord]) -> Vec<Outcome> {
    records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Trailer {
                task_id,
                solved,
                total_cost,
                ..
            } => Some(Outcome {
                task_id: task_id.clone(),
                solved: *solved,
                total_cost: *total_cost,
            }),
            LogRecord::Step { .. } => None,
        })
        .collect()
}

/// Percentage of solved tasks, rounded half-up to two decimals. In strict
/// mode a run that spent more than `budget` counts as unsolved.
pub fn acc_at_b(results: &[Outcome], budget: Dollars, strict: bool) -> Result<f64, BenchError> {
    if results.is_empty() {
        return Err(BenchError::EmptyResults);
    }
    let solved = results
        .iter()
        .filter(|r| r.solved && (!strict || r.total_cost <= budget))
        .count() as u64;
    let n = results.len() as u64;
    // hundredths of a percent, rounded half up, in integers
    let basis = (solved * 20_000 + n) / (2 * n);
    Ok(basis as f64 / 100.0)
}

/// Aggregates for one (method, budget, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub budget: Dollars,
    pub seed: u64,
    pub tasks: usize,
    pub acc: f64,
    pub acc_lenient: f64,
    pub mean_cost: Dollars,
    /// mean cost / budget
    pub utilization: f64,
    pub overshoots: usize,
    pub overshoot_tasks: Vec<String>,
}

impl CellSummary {
    pub fn from_outcomes(
        method: &str,
        budget: Dollars,
        seed: u64,
        outcomes: &[Outcome],
    ) -> Result<Self, BenchError> {
        let total = outcomes
            .iter()
            .fold(Dollars::ZERO, |acc, o| acc + o.total_cost);
        let mean_cost = Estimate::mean(total, outcomes.len().max(1) as u64).round_to_dollars();
        let overshoot_tasks: Vec<String> = outcomes
            .iter()
            .filter(|o| o.total_cost > budget)
            .map(|o| o.task_id.clone())
            .collect();
        Ok(CellSummary {
            method: method.to_string(),
            budget,
            seed,
            tasks: outcomes.len(),
            acc: acc_at_b(outcomes, budget, true)?,
            acc_lenient: acc_at_b(outcomes, budget, false)?,
            mean_cost,
            utilization: round4(mean_cost.to_f64() / budget.to_f64()),
            overshoots: overshoot_tasks.len(),
            overshoot_tasks,
        })
    }
}

pub(crate) fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcomes(solved: usize, n: usize) -> Vec<Outcome> {
        (0..n)
            .map(|i| Outcome {
                task_id: format!("t{i}"),
                solved: i < solved,
                total_cost: Dollars::from_cents(1),
            })
            .collect()
    }

    #[test]
    fn two_decimal_percentages() {
        let b = Dollars::from_cents(50);
        assert_eq!(acc_at_b(&outcomes(78, 162), b, true).unwrap(), 48.15);
        assert_eq!(acc_at_b(&outcomes(5, 5), b, true).unwrap(), 100.0);
        assert_eq!(acc_at_b(&outcomes(1, 3), b, true).unwrap(), 33.33);
        assert_eq!(acc_at_b(&outcomes(2, 3), b, true).unwrap(), 66.67);
        assert!(matches!(
            acc_at_b(&[], b, true),
            Err(BenchError::EmptyResults)
        ));
    }

    #[test]
    fn strict_mode_drops_overshoot() {
        let b = Dollars::from_cents(10);
        let mut o = outcomes(0, 5);
        o[0].solved = true;
        o[0].total_cost = Dollars::from_cents(11);
        assert_eq!(acc_at_b(&o, b, true).unwrap(), 0.0);
        assert_eq!(acc_at_b(&o, b, false).unwrap(), 20.0);
        let c = CellSummary::from_outcomes("m", b, 0, &o).unwrap();
        assert_eq!(c.overshoot_tasks, vec!["t0".to_string()]);
        // (11 + 4) / 5 = 3 cents over a 10 cent budget
        assert_eq!(c.mean_cost, Dollars::from_cents(3));
        assert_eq!(c.utilization, 0.3);
    }
}
