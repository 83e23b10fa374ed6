//! Seeded synthetic multi-hop retrieval world.
//!
//! Each task hides its answer behind a chain of documents. A searcher surfaces
//! the next document of the chain with probability `p_hit`; a reader turns a
//! correct document into evidence; a reasoner answers correctly with
//! probability `p_reason` once the whole chain is evidenced, and recognizes a
//! correct answer already present in its context. Token counts are drawn per
//! invocation from per-role log-normal models.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::observe::{
    answer_line, candidates_line, doc_name, docs_in_text, evidence_line, read_line, Observation,
    COMPLETION_MARKER,
};
use super::{AgentError, Backend, CallSite, InvocationResult, Role, WorkerAgent};
use crate::action::Transcript;
use crate::cost::TokenUsage;
use crate::grade::answers_match;
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    /// Median `median`, log-space spread `sigma`.
    pub fn median(median: f64, sigma: f64) -> Self {
        LogNormalParams {
            mu: median.ln(),
            sigma,
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> u64 {
        let dist = LogNormal::new(self.mu, self.sigma.max(0.0)).expect("valid log-normal");
        let v: f64 = dist.sample(rng);
        v.round().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleTokens {
    pub input: LogNormalParams,
    pub output: LogNormalParams,
}

impl RoleTokens {
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> TokenUsage {
        let input = self.input.draw(rng);
        let output = self.output.draw(rng);
        TokenUsage::new(input, output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenModel {
    pub searcher: RoleTokens,
    pub reader: RoleTokens,
    pub reasoner: RoleTokens,
    pub critic: RoleTokens,
}

impl TokenModel {
    pub fn for_role(&self, role: Role) -> &RoleTokens {
        match role {
            Role::Searcher => &self.searcher,
            Role::Reader => &self.reader,
            Role::Reasoner => &self.reasoner,
            Role::Critic => &self.critic,
        }
    }
}

impl Default for TokenModel {
    fn default() -> Self {
        let rt = |i: f64, o: f64| RoleTokens {
            input: LogNormalParams::median(i, 0.25),
            output: LogNormalParams::median(o, 0.3),
        };
        TokenModel {
            searcher: rt(900.0, 250.0),
            reader: rt(4000.0, 350.0),
            reasoner: rt(2500.0, 500.0),
            critic: rt(2000.0, 200.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub num_docs: u32,
    /// Probability one search surfaces the next document of the chain.
    pub p_hit: f64,
    /// Probability one reasoning call derives the answer from full evidence.
    pub p_reason: f64,
    /// Candidates returned per search.
    pub top_k: usize,
    /// Inclusive chain length range for tasks that do not state their hops.
    pub min_hops: usize,
    pub max_hops: usize,
    pub tokens: TokenModel,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            num_docs: 5000,
            p_hit: 0.35,
            p_reason: 0.5,
            top_k: 5,
            min_hops: 1,
            max_hops: 3,
            tokens: TokenModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldTask {
    pub id: String,
    pub chain: Vec<u32>,
    pub answer: String,
}

/// The synthetic backend. Randomness for each invocation is derived from the
/// world seed and the call site, so concurrent calls stay reproducible.
#[derive(Debug)]
pub struct SyntheticWorld {
    seed: u64,
    params: WorldParams,
    tasks: BTreeMap<String, WorldTask>,
    invocations: AtomicU64,
    per_agent: Mutex<BTreeMap<String, u64>>,
}

impl SyntheticWorld {
    /// Build chains for `(task_id, answer, hops)` triples. Chains depend only
    /// on the world seed and task id.
    pub fn new<'a>(
        seed: u64,
        params: WorldParams,
        tasks: impl IntoIterator<Item = (&'a str, &'a str, Option<usize>)>,
    ) -> Self {
        assert!(params.num_docs as usize > params.top_k, "world too small");
        assert!((0.0..=1.0).contains(&params.p_hit));
        assert!((0.0..=1.0).contains(&params.p_reason));
        let mut map = BTreeMap::new();
        for (id, answer, hops) in tasks {
            let mut rng = StreamKey::new("world-chain").with(seed).with(id).rng();
            let hops = hops.unwrap_or_else(|| {
                rng.random_range(
                    params.min_hops.max(1)..=params.max_hops.max(params.min_hops.max(1)),
                )
            });
            let mut chain = Vec::with_capacity(hops);
            while chain.len() < hops.max(1) {
                let d = rng.random_range(0..params.num_docs);
                if !chain.contains(&d) {
                    chain.push(d);
                }
            }
            map.insert(
                id.to_string(),
                WorldTask {
                    id: id.to_string(),
                    chain,
                    answer: answer.to_string(),
                },
            );
        }
        SyntheticWorld {
            seed,
            params,
            tasks: map,
            invocations: AtomicU64::new(0),
            per_agent: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn task(&self, id: &str) -> Option<&WorldTask> {
        self.tasks.get(id)
    }

    /// Total worker invocations so far.
    pub fn invocation_count(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn invocations_by_agent(&self) -> BTreeMap<String, u64> {
        self.per_agent.lock().expect("counter poisoned").clone()
    }

    fn count(&self, agent: &str) {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        *self
            .per_agent
            .lock()
            .expect("counter poisoned")
            .entry(agent.to_string())
            .or_default() += 1;
    }

    fn search(&self, task: &WorldTask, obs: &Observation, rng: &mut ChaCha8Rng) -> String {
        let target = obs.first_missing_hop().min(task.chain.len() - 1);
        let correct = task.chain[target];
        let mut docs = Vec::with_capacity(self.params.top_k);
        if rng.random_bool(self.params.p_hit) {
            docs.push(correct);
        }
        while docs.len() < self.params.top_k {
            let d = rng.random_range(0..self.params.num_docs);
            if d != correct && !docs.contains(&d) {
                docs.push(d);
            }
        }
        docs.shuffle(rng);
        candidates_line(target, &docs)
    }

    fn read(
        &self,
        task: &WorldTask,
        subtask: &str,
        obs: &Observation,
    ) -> Result<String, AgentError> {
        let mut docs: Vec<u32> = Vec::new();
        for d in docs_in_text(subtask) {
            if d >= u64::from(self.params.num_docs) {
                return Err(AgentError::UnknownDocument(format!("doc-{d}")));
            }
            docs.push(d as u32);
        }
        if docs.is_empty() {
            docs = obs.pending();
            if docs.is_empty() {
                if let Some((_, latest)) = &obs.candidates {
                    docs = latest.clone();
                }
            }
        }
        let known = obs.hops();
        let mut lines = vec![read_line(&docs)];
        let mut found_new = false;
        for d in &docs {
            if let Some(hop) = task.chain.iter().position(|c| c == d) {
                lines.push(evidence_line(hop, *d, hop + 1 == task.chain.len()));
                found_new |= !known.contains(&hop);
            }
        }
        if found_new {
            lines.insert(0, COMPLETION_MARKER.to_string());
        }
        Ok(lines.join("\n"))
    }

    fn chain_complete(task: &WorldTask, obs: &Observation) -> bool {
        let proven: BTreeSet<(usize, u32)> = task
            .chain
            .iter()
            .enumerate()
            .map(|(h, d)| (h, *d))
            .collect();
        proven.is_subset(&obs.evidence)
    }

    fn derive_answer(&self, task: &WorldTask, obs: &Observation, rng: &mut ChaCha8Rng) -> String {
        let draw = rng.random_bool(self.params.p_reason);
        let wrong = format!("unknown-{}", rng.random_range(0..1_000_000u32));
        if Self::chain_complete(task, obs) {
            let recognized = obs.answers.iter().any(|a| answers_match(a, &task.answer));
            if draw || recognized {
                return task.answer.clone();
            }
        }
        wrong
    }

    fn reason(&self, task: &WorldTask, obs: &Observation, rng: &mut ChaCha8Rng) -> String {
        answer_line(&self.derive_answer(task, obs, rng))
    }

    fn critique(&self, task: &WorldTask, obs: &Observation, rng: &mut ChaCha8Rng) -> String {
        if Self::chain_complete(task, obs) {
            format!("complete\n{}", self.reason(task, obs, rng))
        } else {
            let hops = obs.hops();
            let missing = (0..task.chain.len())
                .find(|h| !hops.contains(h))
                .unwrap_or(0);
            format!("missing hop={missing}")
        }
    }

    /// Merge branch outputs: union of candidates, reads and evidence; answers
    /// are resolved by the aggregator's role.
    fn aggregate(
        &self,
        role: Role,
        task: &WorldTask,
        context: &Transcript,
        rng: &mut ChaCha8Rng,
    ) -> String {
        let branches: Vec<&str> = context
            .turns()
            .iter()
            .filter(|t| t.speaker.starts_with("branch"))
            .map(|t| t.text.as_str())
            .collect();
        let mut cand_hop = None;
        let mut cand_docs = BTreeSet::new();
        let mut read = BTreeSet::new();
        let mut evidence = BTreeSet::new();
        let mut final_hop = None;
        let mut answers = Vec::new();
        for b in &branches {
            // each branch parsed on its own so candidate lists do not shadow each other
            let o = Observation::from_texts([*b]);
            if let Some((hop, docs)) = o.candidates {
                cand_hop = Some(hop);
                cand_docs.extend(docs);
            }
            read.extend(o.read);
            evidence.extend(o.evidence);
            if o.final_hop.is_some() {
                final_hop = o.final_hop;
            }
            answers.extend(o.answers);
        }
        let mut lines = Vec::new();
        if let Some(hop) = cand_hop {
            let docs: Vec<u32> = cand_docs.into_iter().collect();
            lines.push(candidates_line(hop, &docs));
        }
        if !read.is_empty() {
            lines.push(read_line(&read.into_iter().collect::<Vec<_>>()));
        }
        for (hop, doc) in &evidence {
            lines.push(evidence_line(*hop, *doc, Some(*hop) == final_hop));
        }
        if !answers.is_empty() {
            let answer = match role {
                Role::Reasoner | Role::Critic => {
                    let obs = Observation::from_texts(context.texts());
                    self.derive_answer(task, &obs, rng)
                }
                Role::Searcher | Role::Reader => modal(&answers),
            };
            lines.push(answer_line(&answer));
        }
        if lines.is_empty() {
            lines.push("nothing to aggregate".to_string());
        }
        lines.join("\n")
    }
}

fn modal(answers: &[String]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a.as_str()).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts
        .into_iter()
        .find(|(_, c)| *c == best)
        .map(|(a, _)| a.to_string())
        .unwrap_or_default()
}

impl Backend for SyntheticWorld {
    fn invoke(
        &self,
        agent: &WorkerAgent,
        subtask: &str,
        context: &Transcript,
        site: &CallSite,
    ) -> Result<InvocationResult, AgentError> {
        self.count(agent.name());
        let task = self
            .tasks
            .get(&site.task_id)
            .ok_or_else(|| AgentError::UnknownTask(site.task_id.clone()))?;
        let mut rng = site
            .key
            .with("world")
            .with(self.seed)
            .with(agent.name())
            .rng();
        let usage = self.params.tokens.for_role(agent.role).draw(&mut rng);
        let obs = Observation::from_texts(context.texts());
        let output = if subtask.trim_start().starts_with("aggregate") {
            self.aggregate(agent.role, task, context, &mut rng)
        } else {
            match agent.role {
                Role::Searcher => self.search(task, &obs, &mut rng),
                Role::Reader => self.read(task, subtask, &obs)?,
                Role::Reasoner => self.reason(task, &obs, &mut rng),
                Role::Critic => self.critique(task, &obs, &mut rng),
            }
        };
        Ok(InvocationResult { output, usage })
    }
}

/// Name of the document at `hop` of a task's chain, for tests and fixtures.
pub fn chain_doc(task: &WorldTask, hop: usize) -> String {
    doc_name(task.chain[hop])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Turn;

    fn world(p_hit: f64, p_reason: f64, hops: usize) -> SyntheticWorld {
        let params = WorldParams {
            p_hit,
            p_reason,
            ..WorldParams::default()
        };
        SyntheticWorld::new(42, params, [("q1", "Paris", Some(hops))])
    }

    fn site(path: &str) -> CallSite {
        CallSite::new("q1", StreamKey::new("test").with(path))
    }

    fn agents() -> (WorkerAgent, WorkerAgent, WorkerAgent, WorkerAgent) {
        (
            WorkerAgent::new("search", Role::Searcher, "m"),
            WorkerAgent::new("browse", Role::Reader, "m"),
            WorkerAgent::new("reason", Role::Reasoner, "m"),
            WorkerAgent::new("critic", Role::Critic, "m"),
        )
    }

    #[test]
    fn perfect_search_hits_and_blind_search_misses() {
        let (search, ..) = agents();
        let w = world(1.0, 1.0, 1);
        let doc = chain_doc(w.task("q1").unwrap(), 0);
        for i in 0..20 {
            let r = w
                .invoke(&search, "find", &Transcript::new(), &site(&i.to_string()))
                .unwrap();
            assert!(r.output.contains(&doc));
            assert_eq!(r.output.split(',').count(), 5);
        }
        let w = world(0.0, 1.0, 1);
        for i in 0..200 {
            let r = w
                .invoke(&search, "find", &Transcript::new(), &site(&i.to_string()))
                .unwrap();
            assert!(!r.output.contains(&format!("{doc},")) && !r.output.ends_with(&doc));
        }
    }

    #[test]
    fn full_chain_walkthrough() {
        let (search, browse, reason, critic) = agents();
        let w = world(1.0, 1.0, 2);
        let mut ctx = Transcript::new();
        for hop in 0..2 {
            let s = w
                .invoke(&search, "find", &ctx, &site(&format!("s{hop}")))
                .unwrap();
            ctx.push(Turn::new("search", s.output));
            let c = w
                .invoke(&critic, "check", &ctx, &site(&format!("c{hop}")))
                .unwrap();
            assert_eq!(c.output, format!("missing hop={hop}"));
            let b = w
                .invoke(&browse, "read", &ctx, &site(&format!("b{hop}")))
                .unwrap();
            assert!(b.output.starts_with(COMPLETION_MARKER));
            ctx.push(Turn::new("browse", b.output));
        }
        let obs = Observation::from_texts(ctx.texts());
        assert!(obs.complete());
        let r = w.invoke(&reason, "answer", &ctx, &site("r")).unwrap();
        assert_eq!(r.output, "answer Paris");
        assert_eq!(w.invocation_count(), 7);
        assert_eq!(w.invocations_by_agent()["search"], 2);
    }

    #[test]
    fn reasoning_without_evidence_is_wrong() {
        let (.., reason, _) = agents();
        let w = world(1.0, 1.0, 1);
        let r = w
            .invoke(&reason, "answer", &Transcript::new(), &site("r"))
            .unwrap();
        assert!(r.output.starts_with("answer unknown-"));
    }

    #[test]
    fn reader_rejects_unknown_document() {
        let (_, browse, ..) = agents();
        let w = world(1.0, 1.0, 1);
        let err = w
            .invoke(&browse, "read doc-999999", &Transcript::new(), &site("b"))
            .unwrap_err();
        assert_eq!(err, AgentError::UnknownDocument("doc-999999".into()));
        assert_eq!(w.invocation_count(), 1);
    }

    #[test]
    fn unknown_task_is_an_error() {
        let (search, ..) = agents();
        let w = world(1.0, 1.0, 1);
        let s = CallSite::new("nope", StreamKey::new("x"));
        assert!(matches!(
            w.invoke(&search, "find", &Transcript::new(), &s),
            Err(AgentError::UnknownTask(_))
        ));
    }

    #[test]
    fn replayed_invocations_draw_identical_usage() {
        let (search, ..) = agents();
        let mut params = WorldParams::default();
        params.tokens.searcher.input = LogNormalParams {
            mu: 5.0,
            sigma: 0.3,
        };
        params.tokens.searcher.output = LogNormalParams {
            mu: 5.0,
            sigma: 0.3,
        };
        let a = SyntheticWorld::new(42, params.clone(), [("q1", "x", Some(1))]);
        let b = SyntheticWorld::new(42, params, [("q1", "x", Some(1))]);
        let ra = a
            .invoke(&search, "f", &Transcript::new(), &site("k"))
            .unwrap();
        let rb = b
            .invoke(&search, "f", &Transcript::new(), &site("k"))
            .unwrap();
        assert_eq!(ra, rb);
        let rc = a
            .invoke(&search, "f", &Transcript::new(), &site("k2"))
            .unwrap();
        assert_ne!(ra.usage, rc.usage);
    }

    #[test]
    fn aggregation_unions_branch_results() {
        let (search, _, reason, _) = agents();
        let w = world(0.5, 1.0, 1);
        let mut ctx = Transcript::new();
        for i in 0..3 {
            let r = w
                .invoke(&search, "find", &Transcript::new(), &site(&format!("e{i}")))
                .unwrap();
            ctx.push(Turn::new(format!("branch-{i}"), r.output));
        }
        let agg = w
            .invoke(&reason, "aggregate: find", &ctx, &site("agg"))
            .unwrap();
        let obs = Observation::from_texts([agg.output.as_str()]);
        let (_, docs) = obs.candidates.unwrap();
        assert!(docs.len() >= 5 && docs.windows(2).all(|p| p[0] < p[1]));
    }
}
