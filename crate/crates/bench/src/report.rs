//! Persisted logs and report files.
//!
//! A sweep directory holds `logs/{method}__{budget}__seed{seed}.jsonl` (the
//! trajectory logs of every scored task in task order) and, after
//! [`emit_reports`], `accuracy.md`, `accuracy.csv`, `utilization.csv` and
//! `summary.json`. Cells are ordered by method, budget, then seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;
use weaver_core::orchestrator::{read_log, write_log, LogRecord};
use weaver_core::Dollars;

use crate::metrics::{outcomes_from_log, round4, CellSummary};
use crate::sweep::SweepResult;
use crate::BenchError;

pub fn log_file_name(method: &str, budget: Dollars, seed: u64) -> String {
    format!("{method}__{budget}__seed{seed}.jsonl")
}

/// Writes one log file per cell under `dir/logs`, plus self-play artifacts
/// under `dir/selfplay/seed{seed}`.
pub fn persist_logs(sweep: &SweepResult, dir: &Path) -> Result<(), BenchError> {
    let logs = dir.join("logs");
    std::fs::create_dir_all(&logs)?;
    for cell in &sweep.cells {
        let s = &cell.summary;
        let mut buf = Vec::new();
        for run in &cell.runs {
            write_log(&run.log, &mut buf)?;
        }
        std::fs::write(logs.join(log_file_name(&s.method, s.budget, s.seed)), buf)?;
    }
    for (seed, a) in &sweep.artifacts {
        a.write(&dir.join("selfplay").join(format!("seed{seed}")))?;
    }
    Ok(())
}

fn log_paths(dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.join("logs"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    Ok(paths)
}

/// Rebuilds cell summaries from the trailers of persisted logs.
pub fn summaries_from_logs(dir: &Path) -> Result<Vec<CellSummary>, BenchError> {
    let mut cells = Vec::new();
    for path in log_paths(dir)? {
        let records = read_log(BufReader::new(std::fs::File::open(&path)?))?;
        let Some(LogRecord::Trailer {
            method,
            budget,
            seed,
            ..
        }) = records
            .iter()
            .find(|r| matches!(r, LogRecord::Trailer { .. }))
        else {
            return Err(BenchError::Precondition(format!(
                "{} has no trailer",
                path.display()
            )));
        };
        let outcomes = outcomes_from_log(&records);
        cells.push(CellSummary::from_outcomes(
            method, *budget, *seed, &outcomes,
        )?);
    }
    Ok(cells)
}

/// Per (method, budget) averages over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub method: String,
    pub budget: Dollars,
    pub seeds: usize,
    pub acc: f64,
    pub mean_cost: Dollars,
    pub utilization: f64,
    pub overshoots: usize,
}

fn sorted(cells: &[CellSummary]) -> Vec<CellSummary> {
    let mut cells = cells.to_vec();
    cells.sort_by(|a, b| (&a.method, a.budget, a.seed).cmp(&(&b.method, b.budget, b.seed)));
    cells
}

pub fn aggregate(cells: &[CellSummary]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, Dollars), Vec<&CellSummary>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((c.method.clone(), c.budget))
            .or_default()
            .push(c);
    }
    groups
        .into_iter()
        .map(|((method, budget), cs)| {
            let n = cs.len();
            let total: Dollars = cs.iter().map(|c| c.mean_cost).sum();
            let mean_cost = weaver_core::Estimate::mean(total, n as u64).round_to_dollars();
            Aggregate {
                method,
                budget,
                seeds: n,
                acc: (cs.iter().map(|c| c.acc).sum::<f64>() / n as f64 * 100.0).round() / 100.0,
                mean_cost,
                utilization: round4(mean_cost.to_f64() / budget.to_f64()),
                overshoots: cs.iter().map(|c| c.overshoots).sum(),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    cells: &'a [CellSummary],
    aggregate: &'a [Aggregate],
}

/// Writes the accuracy table (markdown and CSV), the utilization table and
/// `summary.json`. Output depends only on `cells`.
pub fn emit_reports(cells: &[CellSummary], dir: &Path) -> Result<(), BenchError> {
    if cells.is_empty() {
        return Err(BenchError::EmptyResults);
    }
    std::fs::create_dir_all(dir)?;
    let cells = sorted(cells);
    let agg = aggregate(&cells);
    let mut budgets: Vec<Dollars> = cells.iter().map(|c| c.budget).collect();
    budgets.sort();
    budgets.dedup();
    let mut methods: Vec<&str> = cells.iter().map(|c| c.method.as_str()).collect();
    methods.dedup();

    let mut md = String::from("| method |");
    for b in &budgets {
        let _ = write!(md, " Acc@{b} |");
    }
    md.push_str("\n|---|");
    md.push_str(&"---:|".repeat(budgets.len()));
    md.push('\n');
    for m in &methods {
        let _ = write!(md, "| {m} |");
        for b in &budgets {
            match agg.iter().find(|a| a.method == *m && a.budget == *b) {
                Some(a) => {
                    let _ = write!(md, " {:.2} |", a.acc);
                }
                None => md.push_str(" - |"),
            }
        }
        md.push('\n');
    }
    std::fs::write(dir.join("accuracy.md"), md)?;

    let mut csv = String::from("method,budget,seed,tasks,acc,acc_lenient,overshoots\n");
    for c in &cells {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.2},{:.2},{}",
            c.method, c.budget, c.seed, c.tasks, c.acc, c.acc_lenient, c.overshoots
        );
    }
    std::fs::write(dir.join("accuracy.csv"), csv)?;

    let mut util = String::from("method,budget,seed,mean_cost,utilization\n");
    for c in &cells {
        let _ = writeln!(
            util,
            "{},{},{},{},{:.4}",
            c.method,
            c.budget,
            c.seed,
            c.mean_cost.format_fixed(6),
            c.utilization
        );
    }
    std::fs::write(dir.join("utilization.csv"), util)?;

    let summary = Summary {
        cells: &cells,
        aggregate: &agg,
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(())
}
