//! Trajectory log: JSON lines with a fixed field order.
//!
//! ```text
//! {"record":"step","task_id":..,"method":..,"budget":..,"step":..,"action_kind":..,
//!  "action_name":..,"subtask":..,"output_digest":..,"input_tokens":..,
//!  "output_tokens":..,"dollars":..,"remaining_after":..}
//! {"record":"trailer","task_id":..,"method":..,"budget":..,"seed":..,
//!  "final_answer":..,"solved":..,"total_cost":..,"overshoot":..}
//! ```
//!
//! Orchestrator and planner calls appear as steps with `action_kind`
//! `"orchestrator"`; dollar amounts are decimal strings.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::money::Dollars;

/// `action_kind` of records describing orchestrator/planner spend.
pub const ORCHESTRATOR_KIND: &str = "orchestrator";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        task_id: String,
        method: String,
        budget: Dollars,
        step: usize,
        action_kind: String,
        action_name: String,
        subtask: String,
        output_digest: String,
        input_tokens: u64,
        output_tokens: u64,
        dollars: Dollars,
        remaining_after: Dollars,
    },
    Trailer {
        task_id: String,
        method: String,
        budget: Dollars,
        seed: u64,
        final_answer: Option<String>,
        solved: bool,
        total_cost: Dollars,
        overshoot: bool,
    },
}

pub fn write_log(records: &[LogRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log(r: impl BufRead) -> Result<Vec<LogRecord>, serde_json::Error> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_order_is_stable() {
        let r = LogRecord::Trailer {
            task_id: "t".into(),
            method: "m".into(),
            budget: Dollars::from_cents(20),
            seed: 1,
            final_answer: Some("x".into()),
            solved: true,
            total_cost: Dollars::from_cents(3),
            overshoot: false,
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.starts_with(
            r#"{"record":"trailer","task_id":"t","method":"m","budget":"0.2","seed":1"#
        ));
        let mut buf = Vec::new();
        write_log(std::slice::from_ref(&r), &mut buf).unwrap();
        assert_eq!(read_log(&buf[..]).unwrap(), vec![r]);
    }
}
