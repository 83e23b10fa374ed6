//! Line protocol spoken by the synthetic world, and a parser that folds a
//! transcript into what has been learned so far.
//!
//! ```text
//! candidates hop=1 docs=doc-12,doc-40,doc-77
//! read docs=doc-12,doc-40
//! evidence hop=1 doc=doc-40
//! evidence hop=2 doc=doc-3 final
//! answer Paris
//! missing hop=2
//! complete
//! ```

use std::collections::BTreeSet;

/// Outputs beginning with this marker end an interactive exchange early.
pub const COMPLETION_MARKER: &str = "[done]";

pub fn doc_name(doc: u32) -> String {
    format!("doc-{doc}")
}

pub fn parse_doc(token: &str) -> Option<u64> {
    let t = token.trim_matches(|c: char| c == ',' || c == ';' || c == '.' || c == ':');
    t.strip_prefix("doc-").and_then(|n| n.parse().ok())
}

/// All `doc-N` tokens in free text, in order of appearance.
pub fn docs_in_text(text: &str) -> Vec<u64> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == '=')
        .filter_map(parse_doc)
        .collect()
}

fn join_docs(docs: &[u32]) -> String {
    docs.iter()
        .map(|d| doc_name(*d))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn candidates_line(hop: usize, docs: &[u32]) -> String {
    format!("candidates hop={hop} docs={}", join_docs(docs))
}

pub fn read_line(docs: &[u32]) -> String {
    format!("read docs={}", join_docs(docs))
}

pub fn evidence_line(hop: usize, doc: u32, last: bool) -> String {
    if last {
        format!("evidence hop={hop} doc={} final", doc_name(doc))
    } else {
        format!("evidence hop={hop} doc={}", doc_name(doc))
    }
}

pub fn answer_line(answer: &str) -> String {
    format!("answer {answer}")
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn doc_list(value: &str) -> Vec<u32> {
    value
        .split(',')
        .filter_map(parse_doc)
        .filter_map(|d| u32::try_from(d).ok())
        .collect()
}

/// Everything a transcript reveals about a task's progress.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Observation {
    /// Hop index → document that proved it.
    pub evidence: BTreeSet<(usize, u32)>,
    /// Index of the hop flagged as the last one, once seen.
    pub final_hop: Option<usize>,
    /// Most recent candidate list.
    pub candidates: Option<(usize, Vec<u32>)>,
    pub read: BTreeSet<u32>,
    pub answers: Vec<String>,
    pub missing: Option<usize>,
}

impl Observation {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut obs = Observation::default();
        for text in texts {
            obs.absorb(text);
        }
        obs
    }

    pub fn absorb(&mut self, text: &str) {
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("answer ") {
                self.answers.push(rest.trim().to_string());
            } else if line.starts_with("candidates ") {
                let hop = field(line, "hop").and_then(|h| h.parse().ok()).unwrap_or(0);
                let docs = field(line, "docs").map(doc_list).unwrap_or_default();
                self.candidates = Some((hop, docs));
            } else if line.starts_with("read ") {
                if let Some(v) = field(line, "docs") {
                    self.read.extend(doc_list(v));
                }
            } else if line.starts_with("evidence ") {
                let hop = field(line, "hop").and_then(|h| h.parse().ok());
                let doc = field(line, "doc")
                    .and_then(parse_doc)
                    .and_then(|d| u32::try_from(d).ok());
                if let (Some(hop), Some(doc)) = (hop, doc) {
                    self.evidence.insert((hop, doc));
                    if line.split_whitespace().any(|t| t == "final") {
                        self.final_hop = Some(hop);
                    }
                }
            } else if line.starts_with("missing ") {
                self.missing = field(line, "hop").and_then(|h| h.parse().ok());
            } else if line == "complete" {
                self.missing = None;
            }
        }
    }

    pub fn hops(&self) -> BTreeSet<usize> {
        self.evidence.iter().map(|(h, _)| *h).collect()
    }

    /// First hop index with no evidence.
    pub fn first_missing_hop(&self) -> usize {
        let hops = self.hops();
        (0..).find(|h| !hops.contains(h)).expect("unbounded range")
    }

    /// The final hop has been seen and every hop up to it is evidenced.
    pub fn complete(&self) -> bool {
        match self.final_hop {
            Some(last) => {
                let hops = self.hops();
                (0..=last).all(|h| hops.contains(&h))
            }
            None => false,
        }
    }

    /// Candidates from the latest search that are unread and still useful.
    pub fn pending(&self) -> Vec<u32> {
        match &self.candidates {
            Some((hop, docs)) if !self.hops().contains(hop) => docs
                .iter()
                .copied()
                .filter(|d| !self.read.contains(d))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn latest_answer(&self) -> Option<&str> {
        self.answers.last().map(String::as_str)
    }
}
