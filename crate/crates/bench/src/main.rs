//! `weaver` command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use weaver_bench::sweep::selfplay;
use weaver_bench::tasks::write_tasks;
use weaver_bench::{
    emit_reports, load_tasks, persist_logs, run_sweep, summaries_from_logs, synth_tasks, world_for,
    Artifacts, Backends, BenchConfig, SweepSpec, TaskRecord,
};
use weaver_core::agents::{Backend, ChatBackend, ChatClient};
use weaver_core::grade::{ChatJudge, Judge};
use weaver_core::orchestrator::{ChatPolicy, Method, Policy, RulePolicy, Task};
use weaver_core::planner::{ChatSpeculator, Speculator};
use weaver_core::Dollars;

#[derive(Parser)]
#[command(
    name = "weaver",
    version,
    about = "Budget-constrained multi-agent orchestration harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Seeded synthetic world.
    Sim,
    /// Chat-completions endpoint from WEAVER_CHAT_ENDPOINT / WEAVER_CHAT_TOKEN.
    Chat,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_enum, default_value = "sim")]
    backend: BackendKind,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ArtifactArgs {
    /// Cost profile from `weaver selfplay`.
    #[arg(long, requires = "modules")]
    profile: Option<PathBuf>,
    /// Module registry from `weaver selfplay`.
    #[arg(long, requires = "profile")]
    modules: Option<PathBuf>,
    /// Trajectory store used to fit the planner's transition prior.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic task file.
    Synth {
        #[arg(long, default_value_t = 230)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-play on the validation slice; writes store, profile and modules.
    Selfplay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// One method at one budget over every task in the file.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        budget: Dollars,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Every method × budget × seed cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<Dollars>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Rebuild reports from the logs of a sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<BenchConfig> {
    match path {
        Some(p) => BenchConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(BenchConfig::default()),
    }
}

struct Stack {
    backend: Box<dyn Backend>,
    policy: Box<dyn Policy>,
    client: Option<ChatClient>,
}

fn build_stack(kind: BackendKind, tasks: &[TaskRecord], cfg: &BenchConfig) -> Result<Stack> {
    Ok(match kind {
        BackendKind::Sim => Stack {
            backend: Box::new(world_for(tasks, cfg.world_seed, &cfg.world)),
            policy: Box::new(RulePolicy::new(cfg.policy.clone())),
            client: None,
        },
        BackendKind::Chat => {
            let client = ChatClient::from_env()?;
            Stack {
                backend: Box::new(ChatBackend::new(
                    client.clone(),
                    cfg.prompts.clone(),
                    cfg.chat.max_tokens,
                )),
                policy: Box::new(ChatPolicy::new(
                    client.clone(),
                    cfg.chat.policy_model.clone(),
                )),
                client: Some(client),
            }
        }
    })
}

fn load_artifacts(args: &ArtifactArgs) -> Result<Option<Artifacts>> {
    match (&args.profile, &args.modules) {
        (Some(p), Some(m)) => Ok(Some(Artifacts::read(p, m, args.store.as_deref())?)),
        _ => Ok(None),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth {
            n,
            seed,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let tasks = synth_tasks(n, seed, &cfg.world);
            let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            write_tasks(&tasks, &mut f)?;
            log::info!("wrote {} tasks to {}", tasks.len(), out.display());
        }
        Command::Selfplay {
            common,
            rounds,
            seed,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(r) = rounds {
                cfg.selfplay.rounds = r;
            }
            let tasks = load_tasks(&common.tasks)?;
            let stack = build_stack(common.backend, &tasks, &cfg)?;
            let slice: Vec<Task> = tasks
                .iter()
                .take(cfg.validation_size)
                .map(TaskRecord::task)
                .collect();
            let backends = Backends {
                backend: stack.backend.as_ref(),
                policy: stack.policy.as_ref(),
                speculator: None,
                judge: None,
            };
            let a = selfplay(&slice, &cfg, backends, seed)?;
            a.write(&common.out)?;
            for m in a.registry.modules() {
                log::info!("module {}: {}", m.name, m.signature());
            }
        }
        Command::Run {
            common,
            artifacts,
            method,
            budget,
            seed,
        } => {
            let spec = SweepSpec {
                methods: vec![method],
                budgets: vec![budget],
                seeds: vec![seed],
            };
            sweep_command(common, &artifacts, spec)?;
        }
        Command::Sweep {
            common,
            artifacts,
            methods,
            budgets,
            seeds,
        } => {
            let spec = SweepSpec {
                methods,
                budgets,
                seeds,
            };
            sweep_command(common, &artifacts, spec)?;
        }
        Command::Report { input, out } => {
            let cells = summaries_from_logs(&input)?;
            emit_reports(&cells, &out)?;
        }
    }
    Ok(())
}

fn sweep_command(common: Common, artifact_args: &ArtifactArgs, spec: SweepSpec) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let tasks = load_tasks(&common.tasks)?;
    let artifacts = load_artifacts(artifact_args)?;
    let stack = build_stack(common.backend, &tasks, &cfg)?;
    let chat_speculator: Option<ChatSpeculator> = match (&stack.client, &artifacts) {
        (Some(client), Some(a)) => Some(ChatSpeculator::new(
            client.clone(),
            cfg.chat.policy_model.clone(),
            cfg.prices.clone(),
            a.costed_registry(),
        )),
        _ => None,
    };
    let judge: Option<ChatJudge> = match &stack.client {
        Some(client) if cfg.chat.judge => {
            Some(ChatJudge::new(client.clone(), cfg.chat.judge_model.clone()))
        }
        _ => None,
    };
    let backends = Backends {
        backend: stack.backend.as_ref(),
        policy: stack.policy.as_ref(),
        speculator: chat_speculator.as_ref().map(|s| s as &dyn Speculator),
        judge: judge.as_ref().map(|j| j as &dyn Judge),
    };
    let result = run_sweep(&tasks, &spec, &cfg, backends, artifacts.as_ref())?;
    persist_logs(&result, &common.out)?;
    if result.cells.is_empty() {
        bail!("no cell completed: {}", result.errors.join("; "));
    }
    emit_reports(&result.summaries(), &common.out)?;
    for e in &result.errors {
        log::error!("{e}");
    }
    print!(
        "{}",
        std::fs::read_to_string(common.out.join("accuracy.md"))?
    );
    Ok(())
}
