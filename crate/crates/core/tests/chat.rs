mod common;

use std::time::Duration;

use common::Stub;
use weaver_core::agents::{
    AgentError, Backend, CallSite, ChatBackend, ChatClient, ChatMessage, ChatRequest, Role,
    RolePrompts, WorkerAgent,
};
use weaver_core::collab::{
    builtin_agents, builtin_registry, Benchmark, ModuleRegistry, HAIKU, SONNET,
};
use weaver_core::grade::{ChatJudge, Judge};
use weaver_core::orchestrator::{ChatPolicy, Policy, PolicyView, Task};
use weaver_core::planner::{ChatSpeculator, Speculator};
use weaver_core::reflection::{
    llm_reflect, StoredStep, TrajectoryRecord, TrajectoryStore, DEFAULT_REFLECTION_PROMPT,
};
use weaver_core::rng::StreamKey;
use weaver_core::{Action, ActionId, PriceSheet, TokenUsage, Transcript};

fn client(stub: &Stub) -> ChatClient {
    ChatClient::new(stub.url.clone(), Some("secret".into())).with_retry(3, Duration::from_millis(1))
}

fn request() -> ChatRequest {
    ChatRequest {
        model: HAIKU.into(),
        messages: vec![ChatMessage::user("hi")],
        max_tokens: 16,
    }
}

#[test]
fn backend_reports_provider_usage() {
    let stub = Stub::start(vec![Stub::ok("candidates hop=0 docs=doc-1", 10, 5)]);
    let backend = ChatBackend::new(client(&stub), RolePrompts::default(), 64);
    let agent = WorkerAgent::new("search", Role::Searcher, HAIKU);
    let site = CallSite::new("t1", StreamKey::new("x"));
    let out = backend
        .invoke(&agent, "find the capital", &Transcript::new(), &site)
        .unwrap();
    assert_eq!(out.usage, TokenUsage::new(10, 5));
    assert_eq!(out.output, "candidates hop=0 docs=doc-1");
    let req = &stub.requests()[0];
    assert_eq!(req["model"], HAIKU);
    assert!(req["messages"][0]["content"]
        .as_str()
        .unwrap()
        .contains("find the capital"));
}

#[test]
fn server_errors_exhaust_retries() {
    let stub = Stub::start(vec![(500, "{}".into())]);
    let err = client(&stub).complete(&request()).unwrap_err();
    assert!(
        matches!(err, AgentError::BackendUnavailable { attempts: 3, .. }),
        "{err:?}"
    );
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn transient_failure_then_success() {
    let stub = Stub::start(vec![(429, "{}".into()), Stub::ok("fine", 1, 1)]);
    let resp = client(&stub).complete(&request()).unwrap();
    assert_eq!(resp.text, "fine");
    assert_eq!(stub.requests().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::start(vec![(400, "bad".into())]);
    let err = client(&stub).complete(&request()).unwrap_err();
    assert_eq!(
        err,
        AgentError::Rejected {
            status: 400,
            body: "bad".into()
        }
    );
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn missing_usage_is_malformed() {
    let stub = Stub::start(vec![(200, r#"{"text":"x"}"#.into())]);
    assert_eq!(
        client(&stub).complete(&request()).unwrap_err(),
        AgentError::MalformedUsage
    );
    let stub = Stub::start(vec![(
        200,
        r#"{"usage":{"input_tokens":1,"output_tokens":1}}"#.into(),
    )]);
    assert!(matches!(
        client(&stub).complete(&request()).unwrap_err(),
        AgentError::MalformedResponse(_)
    ));
}

#[test]
fn chat_policy_parses_candidates() {
    let stub = Stub::start(vec![Stub::ok(
        "thinking\nACTION search_then_browse: find the founder\nACTION reason: who founded it\nACTION nope: x",
        300,
        40,
    )]);
    let policy = ChatPolicy::new(client(&stub), SONNET);
    let registry = builtin_registry(Benchmark::GaiaLike);
    let task = Task {
        id: "t".into(),
        question: "Who founded the company?".into(),
        answer: "x".into(),
    };
    let view = PolicyView {
        task: &task,
        history: &[],
        registry: &registry,
        budget: None,
        carried: &[],
    };
    let p = policy.propose(&view, 2, &StreamKey::new("p")).unwrap();
    assert_eq!(p.candidates.len(), 2);
    assert_eq!(p.candidates[0].id, ActionId::module("search_then_browse"));
    assert_eq!(p.candidates[1].subtask, "who founded it");
    assert_eq!(p.usage, TokenUsage::new(300, 40));
}

#[test]
fn chat_speculator_prices_its_calls() {
    let stub = Stub::start(vec![Stub::ok(
        "ROLLOUT: search -> browse -> reason -> finish\nROLLOUT: search -> reason -> finish",
        1000,
        1000,
    )]);
    let registry = builtin_registry(Benchmark::GaiaLike);
    let spec = ChatSpeculator::new(client(&stub), SONNET, PriceSheet::reference(), registry);
    let cand = Action::new(ActionId::agent("search"), "q").unwrap();
    let r = spec
        .rollouts(&cand, 2, 6, &StreamKey::new("s"), "")
        .unwrap();
    assert_eq!(r.sequences.len(), 2);
    assert_eq!(r.sequences[0].len(), 3);
    assert_eq!(r.charges.len(), 1);
    assert_eq!(r.charges[0].dollars, "0.018".parse().unwrap());
}

fn store() -> TrajectoryStore {
    let mut s = TrajectoryStore::new();
    for (i, ok) in [true, true, false].into_iter().enumerate() {
        s.append(TrajectoryRecord {
            task_id: format!("t{i}"),
            round: 0,
            success: ok,
            steps: ["retrieve", "read"]
                .iter()
                .map(|n| StoredStep {
                    action: ActionId::agent(*n),
                    subtask: "q".into(),
                    output_digest: String::new(),
                    cost: Default::default(),
                })
                .collect(),
        });
    }
    s
}

fn retrieval_registry() -> ModuleRegistry {
    ModuleRegistry::with_agents([
        WorkerAgent::new("retrieve", Role::Searcher, HAIKU),
        WorkerAgent::new("read", Role::Reader, HAIKU),
        WorkerAgent::new("judge", Role::Reasoner, SONNET),
    ])
    .unwrap()
}

#[test]
fn reflection_parses_a_proposed_pipeline() {
    let stub = Stub::start(vec![Stub::ok(
        "Retrieval is always followed by reading.\nWORKFLOW: pipeline(retrieve, read)",
        2000,
        300,
    )]);
    let registry = retrieval_registry();
    let out = llm_reflect(
        &store(),
        DEFAULT_REFLECTION_PROMPT,
        &registry,
        &client(&stub),
        SONNET,
        &PriceSheet::reference(),
        "WORKFLOW: ensemble(3, judge)",
    )
    .unwrap();
    assert_eq!(out.modules.len(), 1, "{:?}", out.diagnostics);
    assert_eq!(
        out.modules[0].signature(),
        "pipeline[single(retrieve),single(read)]"
    );
    assert_eq!(out.charges.len(), 1);
    let prompt = stub.requests()[0]["messages"][0]["content"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(prompt.contains("retrieve[q] -> read[q]"));
    assert!(prompt.contains("WORKFLOW: ensemble(3, judge)"));
    assert!(!prompt.contains("{trajectories}"));
}

#[test]
fn reflection_skips_known_structures() {
    let stub = Stub::start(vec![Stub::ok("WORKFLOW: pipeline(search, browse)", 10, 10)]);
    let registry = builtin_registry(Benchmark::GaiaLike);
    let out = llm_reflect(
        &store(),
        DEFAULT_REFLECTION_PROMPT,
        &registry,
        &client(&stub),
        SONNET,
        &PriceSheet::reference(),
        "",
    )
    .unwrap();
    assert!(out.modules.is_empty());
    assert!(out.diagnostics[0].contains("search_then_browse"));
}

#[test]
fn reflection_rejects_prose() {
    let stub = Stub::start(vec![Stub::ok(
        "The agents seem to cooperate nicely.",
        10,
        10,
    )]);
    let registry = ModuleRegistry::with_agents(builtin_agents(Benchmark::GaiaLike)).unwrap();
    let out = llm_reflect(
        &store(),
        DEFAULT_REFLECTION_PROMPT,
        &registry,
        &client(&stub),
        SONNET,
        &PriceSheet::reference(),
        "",
    )
    .unwrap();
    assert!(out.modules.is_empty());
    assert_eq!(out.diagnostics.len(), 1);
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    // nothing listens on the discard port
    let c = ChatClient::new("http://127.0.0.1:9/", None).with_retry(2, Duration::ZERO);
    assert!(matches!(
        c.complete(&request()).unwrap_err(),
        AgentError::BackendUnavailable { attempts: 2, .. }
    ));
}

#[test]
fn chat_judge_reads_the_verdict() {
    let stub = Stub::start(vec![
        Stub::ok("VERDICT: correct", 50, 3),
        Stub::ok("VERDICT: incorrect", 50, 3),
        Stub::ok("no idea", 50, 3),
    ]);
    let judge = ChatJudge::new(client(&stub), SONNET);
    assert!(judge
        .equivalent("capital?", "Paris, France", "Paris")
        .unwrap());
    assert!(!judge.equivalent("capital?", "Lyon", "Paris").unwrap());
    assert!(judge.equivalent("capital?", "x", "Paris").is_err());
    let req = &stub.requests()[0];
    assert!(req["messages"][1]["content"]
        .as_str()
        .unwrap()
        .contains("Paris, France"));
}
