//! Model-driven module induction: show a chat model the successful
//! trajectories and the modules already known, and parse the workflows it
//! proposes.
//!
//! Proposals are read from lines of the form
//!
//! ```text
//! WORKFLOW: pipeline(search, browse)
//! WORKFLOW: interactive(search, browse, 3)
//! WORKFLOW: ensemble(3, reason, agg=reason)
//! ```
//!
//! Arguments name registered agents or modules; modules are inlined.

use std::collections::BTreeSet;

use super::{default_aggregator, ReflectError, TrajectoryStore};
use crate::agents::{ChatClient, ChatMessage, ChatRequest};
use crate::collab::{
    Aggregator, CollaborationModule, ModuleRegistry, Provenance, Strategy, DEFAULT_MAX_ROUNDS,
};
use crate::cost::CostRecord;
use crate::cost::{price_cost, PriceSheet};

/// Default template. Slots: `{trajectories}`, `{few_shot_demonstrations}`,
/// `{collected_collaboration_modules}`.
pub const DEFAULT_REFLECTION_PROMPT: &str = "\
Below are execution traces of a multi-agent system that answered its task correctly. \
Every trace lists the agents or modules called, in order, with the subtask each one received.

{trajectories}

Look for agent interactions that repeat across several traces, for instance a fixed \
sequence of agents, several copies of one agent whose answers are merged, or two agents \
that check and refine each other's work. For each one you find, give a short description, \
the agents it uses, and the evidence from the traces, then state it on its own line as one of

WORKFLOW: pipeline(<agent>, <agent>, ...)
WORKFLOW: interactive(<agent>, <agent>[, <rounds>])
WORKFLOW: ensemble(<copies>, <agent>[, agg=<agent>])

Examples of workflows extracted earlier:
{few_shot_demonstrations}

Workflows that are already known and must not be proposed again:
{collected_collaboration_modules}
";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReflectOutcome {
    /// Novel, signature-deduplicated candidates, in proposal order.
    pub modules: Vec<CollaborationModule>,
    /// One entry per discarded proposal.
    pub diagnostics: Vec<String>,
    pub charges: Vec<CostRecord>,
}

/// Parses one workflow expression (with or without the `WORKFLOW:` prefix).
pub fn parse_workflow(text: &str, registry: &ModuleRegistry) -> Result<Strategy, String> {
    let text = text.trim();
    let text = text
        .strip_prefix("WORKFLOW:")
        .unwrap_or(text)
        .trim()
        .trim_matches('`');
    let open = text
        .find('(')
        .ok_or_else(|| format!("no argument list in `{text}`"))?;
    if !text.ends_with(')') {
        return Err(format!("unterminated argument list in `{text}`"));
    }
    let kind = text[..open].trim().to_ascii_lowercase();
    let args: Vec<&str> = text[open + 1..text.len() - 1]
        .split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .collect();
    let strategy_for = |name: &str| {
        registry
            .resolve(name)
            .and_then(|id| registry.strategy_of(&id))
            .filter(|_| name != crate::action::FINISH)
            .ok_or_else(|| format!("unknown agent or module `{name}`"))
    };
    let strategy = match kind.as_str() {
        "pipeline" => {
            if args.len() < 2 {
                return Err("pipeline needs at least two steps".into());
            }
            Strategy::pipeline(
                args.iter()
                    .map(|a| strategy_for(a))
                    .collect::<Result<_, _>>()?,
            )
        }
        "interactive" => {
            let rounds = match args.len() {
                2 => DEFAULT_MAX_ROUNDS,
                3 => args[2]
                    .parse::<u32>()
                    .map_err(|_| format!("bad round count `{}`", args[2]))?,
                _ => return Err("interactive takes two agents and an optional round count".into()),
            };
            Strategy::interactive(strategy_for(args[0])?, strategy_for(args[1])?, rounds)
        }
        "ensemble" => {
            if !(2..=3).contains(&args.len()) {
                return Err(
                    "ensemble takes a copy count, an agent and an optional aggregator".into(),
                );
            }
            let n = args[0]
                .parse::<u32>()
                .map_err(|_| format!("bad copy count `{}`", args[0]))?;
            let aggregator = match args.get(2) {
                None => default_aggregator(registry),
                Some(a) => match a.strip_prefix("agg=").map(str::trim) {
                    Some("vote") => Aggregator::MajorityVote,
                    Some(name) if registry.agent(name).is_some() => {
                        Aggregator::Agent(name.to_string())
                    }
                    _ => return Err(format!("bad aggregator `{a}`")),
                },
            };
            Strategy::ensemble(n, strategy_for(args[1])?, aggregator)
        }
        other => return Err(format!("unknown workflow kind `{other}`")),
    };
    strategy.validate_shape().map_err(|e| e.to_string())?;
    Ok(strategy)
}

fn render_trajectories(store: &TrajectoryStore) -> String {
    let lines: Vec<String> = store
        .successes()
        .map(|r| {
            let steps: Vec<String> = r
                .steps
                .iter()
                .map(|s| format!("{}[{}]", s.action.name, s.subtask))
                .collect();
            format!(
                "- {} (round {}): {}",
                r.task_id,
                r.round,
                steps.join(" -> ")
            )
        })
        .collect();
    lines.join("\n")
}

fn render_known(registry: &ModuleRegistry) -> String {
    if registry.modules().is_empty() {
        return "(none)".into();
    }
    registry
        .modules()
        .iter()
        .map(|m| format!("- {}: {}", m.name, m.signature()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn fresh_name(strategy: &Strategy, registry: &ModuleRegistry, taken: &BTreeSet<String>) -> String {
    let base = match strategy {
        Strategy::Ensemble { n, child, .. } => {
            format!("reflected_ensemble{n}_{}", child.first_agent())
        }
        Strategy::Interactive { left, right, .. } => {
            format!(
                "reflected_interactive_{}_{}",
                left.first_agent(),
                right.first_agent()
            )
        }
        Strategy::Pipeline { children } => format!(
            "reflected_{}",
            children
                .iter()
                .map(Strategy::first_agent)
                .collect::<Vec<_>>()
                .join("_then_")
        ),
        Strategy::Single { agent } => format!("reflected_{agent}"),
    };
    let mut name = base.clone();
    let mut k = 2;
    while registry.resolve(&name).is_some() || taken.contains(&name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

/// Fills the template, asks `model` once, and keeps the novel parseable
/// proposals. Backend failures are errors; bad proposals are diagnostics.
pub fn llm_reflect(
    store: &TrajectoryStore,
    template: &str,
    registry: &ModuleRegistry,
    client: &ChatClient,
    model: &str,
    prices: &PriceSheet,
    demonstrations: &str,
) -> Result<ReflectOutcome, ReflectError> {
    let prompt = template
        .replace("{trajectories}", &render_trajectories(store))
        .replace("{few_shot_demonstrations}", demonstrations)
        .replace("{collected_collaboration_modules}", &render_known(registry));
    let resp = client.complete(&ChatRequest {
        model: model.to_string(),
        messages: vec![ChatMessage::user(prompt)],
        max_tokens: 2048,
    })?;
    let mut out = ReflectOutcome::default();
    if let Ok(rec) = price_cost(resp.usage, model, prices) {
        out.charges.push(rec);
    }
    let mut seen = BTreeSet::new();
    let mut names = BTreeSet::new();
    let proposals: Vec<&str> = resp
        .text
        .lines()
        .map(str::trim)
        .filter(|l| l.starts_with("WORKFLOW:"))
        .collect();
    if proposals.is_empty() {
        out.diagnostics
            .push("response contains no WORKFLOW line".into());
    }
    for line in proposals {
        let strategy = match parse_workflow(line, registry) {
            Ok(s) => s,
            Err(e) => {
                log::info!("discarded reflection proposal `{line}`: {e}");
                out.diagnostics.push(format!("{line}: {e}"));
                continue;
            }
        };
        let sig = strategy.signature();
        if let Some(existing) = registry.find_signature(&sig) {
            out.diagnostics
                .push(format!("{line}: duplicates `{existing}`"));
            continue;
        }
        if !seen.insert(sig) {
            out.diagnostics.push(format!("{line}: proposed twice"));
            continue;
        }
        let name = fresh_name(&strategy, registry, &names);
        names.insert(name.clone());
        out.modules.push(CollaborationModule::new(
            name,
            strategy,
            Provenance::Reflected,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collab::{builtin_agents, builtin_registry, Benchmark};

    fn agents_only() -> ModuleRegistry {
        ModuleRegistry::with_agents(builtin_agents(Benchmark::GaiaLike)).unwrap()
    }

    #[test]
    fn grammar() {
        let r = agents_only();
        let s = parse_workflow("WORKFLOW: pipeline(search, browse)", &r).unwrap();
        assert_eq!(s.signature(), "pipeline[single(search),single(browse)]");
        let s = parse_workflow("interactive(search, browse, 2)", &r).unwrap();
        assert_eq!(
            s,
            Strategy::interactive(Strategy::single("search"), Strategy::single("browse"), 2)
        );
        let s = parse_workflow("ensemble(3, reason, agg=vote)", &r).unwrap();
        assert_eq!(s.signature(), "ensemble(3,agg=vote)[single(reason)]");
        let s = parse_workflow("ensemble(2, search)", &r).unwrap();
        assert_eq!(s.signature(), "ensemble(2,agg=reason)[single(search)]");
    }

    #[test]
    fn rejects_malformed() {
        let r = agents_only();
        for bad in [
            "pipeline(search)",
            "pipeline(search, nope)",
            "ensemble(1, reason)",
            "ensemble(x, reason)",
            "loop(search, browse)",
            "pipeline(search, browse",
            "just prose",
            "pipeline(search, finish)",
        ] {
            assert!(parse_workflow(bad, &r).is_err(), "{bad}");
        }
    }

    #[test]
    fn modules_are_inlined() {
        let r = builtin_registry(Benchmark::GaiaLike);
        let s = parse_workflow("pipeline(search_then_browse, reason)", &r).unwrap();
        let Strategy::Pipeline { children } = s else {
            panic!()
        };
        assert!(matches!(children[0], Strategy::Pipeline { .. }));
    }

    #[test]
    fn template_has_slots() {
        for slot in [
            "{trajectories}",
            "{few_shot_demonstrations}",
            "{collected_collaboration_modules}",
        ] {
            assert!(DEFAULT_REFLECTION_PROMPT.contains(slot));
        }
    }
}
