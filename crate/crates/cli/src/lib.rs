//! Command-line front end and HTTP service for the mnemo memory engine.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use mnemo_core::adapters::{EndpointConfig, HttpJudge, HttpPolicy};
use mnemo_core::control::{run_control, ControlConfig, Judge, MockJudge, Plan, Policy, ScriptedPolicy, Trajectory};
use mnemo_core::embedding::MockEmbedder;
use mnemo_core::graph::{self, dump, GraphConfig, MemoryGraph};
use mnemo_core::harness::{
    generate_world, read_clips, run_eval, EvalConfig, InProcessBackend, SyntheticWorld, WorldConfig,
};
use mnemo_core::memorize::{ingest_stream, Clock, FixtureGenerator, IngestConfig};
use mnemo_core::rl::{score_group, ScoreInput};
use serde::Serialize;

pub mod client;
pub mod server;

pub use client::HttpBackend;

#[derive(Debug, Parser)]
#[command(name = "mnemo", version, about = "Entity-centric long-term memory with a search/answer loop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a JSON-lines clip stream into a graph file (created if missing).
    Ingest {
        clips: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Stamp nodes with this time (ms since epoch) instead of the wall clock.
        #[arg(long)]
        fixed_clock: Option<u64>,
    },
    /// Answer a question over a graph.
    Ask {
        question: String,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyKind::Scripted)]
        policy: PolicyKind,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        /// Search plan (JSON) for the scripted policy; defaults to searching the question.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
        /// Print the full trajectory.
        #[arg(long)]
        trajectory: bool,
    },
    /// Print graph contents as JSON lines.
    Inspect {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        nodes: bool,
        #[arg(long)]
        edges: bool,
        #[arg(long)]
        clips: bool,
        #[arg(long)]
        characters: bool,
    },
    /// Generate a synthetic world from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a synthetic world, in process or against a running service.
    Eval {
        #[arg(long)]
        world: PathBuf,
        /// Base URL of a `mnemo serve` instance started on an empty graph.
        #[arg(long)]
        server: Option<String>,
    },
    /// Score answer groups (JSON lines of {question, reference, answers}).
    Score {
        groups: PathBuf,
        #[arg(long, value_enum, default_value_t = JudgeKind::Mock)]
        judge: JudgeKind,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Serve a graph over HTTP.
    Serve {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Args)]
pub struct EndpointArgs {
    /// Chat endpoint for http policies and judges.
    #[arg(long, env = "MNEMO_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "MNEMO_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
}

impl EndpointArgs {
    fn config(&self) -> anyhow::Result<EndpointConfig> {
        let Some(url) = &self.endpoint else { bail!("--endpoint is required for http backends") };
        let mut cfg = EndpointConfig::new(url.clone());
        cfg.api_key = self.api_key.clone();
        cfg.model = self.model.clone();
        Ok(cfg)
    }
}

/// Loads a graph file, or returns an empty graph if the file does not exist.
pub fn load_or_new(path: &Path) -> anyhow::Result<MemoryGraph> {
    if path.exists() {
        graph::load_from_path(path).with_context(|| format!("loading {}", path.display()))
    } else {
        Ok(MemoryGraph::new(GraphConfig::default())?)
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AskOutput<'a> {
    answer: Option<&'a str>,
    rounds_used: usize,
    terminated_by: mnemo_core::control::Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<&'a Trajectory>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { clips, graph: path, fixed_clock } => {
            let mut g = load_or_new(&path)?;
            let inputs = read_clips(&clips)?;
            let config = IngestConfig {
                clock: fixed_clock.map(Clock::Fixed).unwrap_or(Clock::System),
                ..IngestConfig::default()
            };
            let reports = ingest_stream(&mut g, &inputs, &FixtureGenerator, &MockEmbedder::default(), &config);
            graph::save_to_path(&g, &path).with_context(|| format!("writing {}", path.display()))?;
            let failed = reports.iter().filter(|r| r.is_rejected()).count();
            info!("ingested {} clips, {} rejected", reports.len() - failed, failed);
            for r in &reports {
                serde_json::to_writer(&mut *out, r)?;
                writeln!(out)?;
            }
        }
        Command::Ask { question, graph: path, policy, rounds, plan, endpoint, trajectory } => {
            let g = graph::load_from_path(&path).with_context(|| format!("loading {}", path.display()))?;
            let config = ControlConfig { max_rounds: rounds, ..ControlConfig::default() };
            let policy: Box<dyn Policy> = match policy {
                PolicyKind::Scripted => {
                    let plan = match plan {
                        Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)
                            .with_context(|| format!("parsing plan {}", p.display()))?,
                        None => Plan::generic(&question),
                    };
                    Box::new(ScriptedPolicy::new(plan).with_last_round_marker(config.prompts.last_round.clone()))
                }
                PolicyKind::Http => Box::new(HttpPolicy::new(endpoint.config()?)),
            };
            let t =
                run_control(&question, &g, &MockEmbedder::default(), policy.as_ref(), &config).map_err(|e| e.error)?;
            print_json(
                out,
                &AskOutput {
                    answer: t.final_answer.as_deref(),
                    rounds_used: t.rounds_used,
                    terminated_by: t.terminated_by,
                    trajectory: trajectory.then_some(&t),
                },
            )?;
        }
        Command::Inspect { graph: path, nodes, edges, clips, characters } => {
            let g = graph::load_from_path(&path).with_context(|| format!("loading {}", path.display()))?;
            if !(nodes || edges || clips || characters) {
                print_json(
                    out,
                    &serde_json::json!({
                        "nodes": g.node_count(),
                        "edges": g.edge_count(),
                        "clips": g.clip_count(),
                        "characters": g.resolve_characters().groups().len(),
                    }),
                )?;
            }
            let sections = [
                (nodes, dump::node_lines as fn(&MemoryGraph) -> Vec<String>),
                (edges, dump::edge_lines),
                (clips, dump::clip_lines),
                (characters, dump::character_lines),
            ];
            for (_, lines) in sections.iter().filter(|(on, _)| *on) {
                for line in lines(&g) {
                    writeln!(out, "{line}")?;
                }
            }
        }
        Command::Simulate { config, out: dir } => {
            let cfg: WorldConfig = serde_json::from_str(&fs::read_to_string(&config)?)
                .with_context(|| format!("parsing {}", config.display()))?;
            let world = generate_world(&cfg)?;
            fs::create_dir_all(&dir)?;
            world.save(&dir)?;
            writeln!(out, "wrote {} clips and {} questions to {}", world.clips.len(), world.qa.len(), dir.display())?;
        }
        Command::Eval { world, server } => {
            let world = SyntheticWorld::load(&world)?;
            let config = EvalConfig::default();
            let report = match server {
                Some(url) => run_eval(&world, &HttpBackend::new(url), &config)?,
                None => {
                    let backend = InProcessBackend::new(MemoryGraph::new(world.config.graph_config())?, config.clone());
                    run_eval(&world, &backend, &config)?
                }
            };
            print_json(out, &report)?;
        }
        Command::Score { groups, judge, endpoint } => {
            let judge: Box<dyn Judge> = match judge {
                JudgeKind::Mock => Box::new(MockJudge),
                JudgeKind::Http => Box::new(HttpJudge::new(endpoint.config()?, Default::default())),
            };
            let reader = BufReader::new(fs::File::open(&groups)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let input: ScoreInput =
                    serde_json::from_str(&line).with_context(|| format!("{}:{}", groups.display(), n + 1))?;
                serde_json::to_writer(&mut *out, &score_group(&input, judge.as_ref())?)?;
                writeln!(out)?;
            }
        }
        Command::Serve { graph: path, port, host } => {
            let g = load_or_new(&path)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(g, Some(path), &format!("{host}:{port}")))?;
        }
    }
    Ok(())
}
