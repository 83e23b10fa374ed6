//! Task files: one JSON object per line,
//! `{"id": .., "question": .., "answer": .., "meta": {..}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use weaver_core::agents::{SyntheticWorld, WorldParams};
use weaver_core::orchestrator::Task;
use weaver_core::rng::StreamKey;

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, serde_json::Value>>,
}

impl TaskRecord {
    pub fn task(&self) -> Task {
        Task {
            id: self.id.clone(),
            question: self.question.clone(),
            answer: self.answer.clone(),
        }
    }

    /// Chain length for the synthetic world, from `meta.hops`.
    pub fn hops(&self) -> Option<usize> {
        self.meta
            .as_ref()?
            .get("hops")?
            .as_u64()
            .map(|h| h as usize)
    }
}

pub fn read_tasks(r: impl BufRead) -> Result<Vec<TaskRecord>, BenchError> {
    let mut out: Vec<TaskRecord> = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| BenchError::TaskFile {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if rec.answer.trim().is_empty() {
            return Err(BenchError::TaskFile {
                line: i + 1,
                reason: format!("task `{}` has an empty answer", rec.id),
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(BenchError::TaskFile {
                line: i + 1,
                reason: format!("duplicate id `{}`", rec.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskRecord>, BenchError> {
    let f = std::fs::File::open(path)?;
    read_tasks(std::io::BufReader::new(f))
}

pub fn write_tasks(tasks: &[TaskRecord], mut w: impl Write) -> std::io::Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

const WORDS: &[&str] = &[
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper",
    "kestrel", "lagoon", "marble", "nimbus", "onyx", "prairie", "quartz", "raven", "sierra",
    "tundra", "umber", "vale", "willow", "xenon", "yarrow", "zephyr",
];

/// `n` multi-hop questions with two-word answers; hop counts are drawn from
/// `params.min_hops..=params.max_hops` and stored in `meta.hops`.
pub fn synth_tasks(n: usize, seed: u64, params: &WorldParams) -> Vec<TaskRecord> {
    let mut rng = StreamKey::new("synth").with(seed).rng();
    let lo = params.min_hops.max(1);
    let hi = params.max_hops.max(lo);
    (0..n)
        .map(|i| {
            let hops = rng.random_range(lo..=hi);
            let a = WORDS.choose(&mut rng).expect("non-empty");
            let b = WORDS.choose(&mut rng).expect("non-empty");
            let answer = format!("{a} {b} {}", rng.random_range(10..100));
            let mut meta = BTreeMap::new();
            meta.insert("hops".to_string(), serde_json::Value::from(hops as u64));
            TaskRecord {
                id: format!("task-{i:04}"),
                question: format!("Following {hops} linked sources from topic {i}, which name is reached at the end?"),
                answer,
                meta: Some(meta),
            }
        })
        .collect()
}

/// The synthetic backend for a task list.
pub fn world_for(tasks: &[TaskRecord], seed: u64, params: &WorldParams) -> SyntheticWorld {
    SyntheticWorld::new(
        seed,
        params.clone(),
        tasks
            .iter()
            .map(|t| (t.id.as_str(), t.answer.as_str(), t.hops())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let tasks = synth_tasks(5, 1, &WorldParams::default());
        let mut buf = Vec::new();
        write_tasks(&tasks, &mut buf).unwrap();
        assert_eq!(read_tasks(&buf[..]).unwrap(), tasks);

        let dup = "{\"id\":\"a\",\"question\":\"q\",\"answer\":\"x\"}\n{\"id\":\"a\",\"question\":\"q\",\"answer\":\"y\"}\n";
        assert!(matches!(
            read_tasks(dup.as_bytes()),
            Err(BenchError::TaskFile { line: 2, .. })
        ));
        let empty = "{\"id\":\"a\",\"question\":\"q\",\"answer\":\" \"}\n";
        assert!(read_tasks(empty.as_bytes()).is_err());
    }

    #[test]
    fn synth_is_seeded() {
        let p = WorldParams::default();
        assert_eq!(synth_tasks(20, 4, &p), synth_tasks(20, 4, &p));
        assert_ne!(synth_tasks(20, 4, &p), synth_tasks(20, 5, &p));
        assert!(synth_tasks(50, 4, &p)
            .iter()
            .all(|t| (p.min_hops..=p.max_hops).contains(&t.hops().unwrap())));
    }
}
