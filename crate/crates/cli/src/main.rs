mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use statrag::attribution::SchemaMode;
use statrag::okg::PerturbMode;
use statrag::{Error, ErrorClass};
use tracing_subscriber::EnvFilter;

use commands::{BenchCmd, Ctx, GraphCmd};
use config::{ClientsConfig, RunConfig};

#[derive(Parser)]
#[command(name = "statrag", version, about = "Citation-graph retrieval and attribution over statute corpora")]
struct Cli {
    #[arg(long, global = true, default_value = "statrag.json")]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the offline stub clients whatever the config says.
    #[arg(long, global = true)]
    stub: bool,
    /// Stop after ranking; no generation.
    #[arg(long, global = true)]
    retrieval_only: bool,
    #[arg(long, global = true, value_enum)]
    schema_mode: Option<Mode>,
    /// Add per-difficulty aggregate blocks to the eval report.
    #[arg(long, global = true, value_enum)]
    slice: Option<Slice>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "per_rule")]
    PerRule,
    #[value(name = "free_form")]
    FreeForm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Slice {
    Difficulty,
}

#[derive(Clone, Copy, ValueEnum)]
enum Perturbation {
    Drop,
    Rewire,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus snapshot, graph and dense index.
    Index,
    /// Answer one question.
    Ask { question: String },
    /// Run the pipeline over a dataset (or score saved outputs) and write a report.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Previously written outputs.jsonl; skips the pipeline.
        #[arg(long)]
        outputs: Option<PathBuf>,
    },
    #[command(subcommand)]
    Graph(GraphSub),
    #[command(subcommand)]
    Bench(BenchSub),
}

#[derive(Subcommand)]
enum GraphSub {
    Stats,
    Components {
        /// `citation`, `all`, or a comma list of edge types.
        #[arg(long, default_value = "citation")]
        edges: String,
    },
    Perturb {
        #[arg(long, value_enum)]
        mode: Perturbation,
        #[arg(long)]
        rate: f64,
    },
    Export {
        #[arg(long)]
        to: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchSub {
    Classify {
        #[arg(long)]
        dataset: PathBuf,
    },
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    Audit {
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Transport => 3,
    }
}

fn run(cli: Cli) -> statrag::Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(o) = cli.out {
        cfg.out_dir = std::env::current_dir().map(|d| d.join(&o)).unwrap_or(o);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.stub && !matches!(cfg.clients, ClientsConfig::Stub { .. }) {
        cfg.clients = ClientsConfig::Stub { canned: None };
    }
    if let Some(m) = cli.schema_mode {
        cfg.schema_mode = match m {
            Mode::PerRule => SchemaMode::PerRule,
            Mode::FreeForm => SchemaMode::FreeForm,
        };
    }
    let (clients, stubs) = cfg.clients()?;
    let ctx = Ctx {
        cfg,
        clients,
        stubs,
        retrieval_only: cli.retrieval_only,
    };
    match cli.cmd {
        Command::Index => commands::index(&ctx),
        Command::Ask { question } => commands::ask(&ctx, &question),
        Command::Eval { dataset, outputs } => commands::eval(&ctx, &dataset, outputs.as_deref(), cli.slice.is_some()),
        Command::Graph(g) => {
            let cmd = match g {
                GraphSub::Stats => GraphCmd::Stats,
                GraphSub::Components { edges } => GraphCmd::Components { edges },
                GraphSub::Perturb { mode, rate } => GraphCmd::Perturb {
                    mode: match mode {
                        Perturbation::Drop => PerturbMode::Drop,
                        Perturbation::Rewire => PerturbMode::Rewire,
                    },
                    rate,
                },
                GraphSub::Export { to } => GraphCmd::Export { to },
            };
            commands::graph(&ctx, cmd)
        }
        Command::Bench(b) => {
            let (cmd, dataset) = match b {
                BenchSub::Classify { dataset } => (BenchCmd::Classify, dataset),
                BenchSub::Validate { dataset } => (BenchCmd::Validate, dataset),
                BenchSub::Audit { dataset } => (BenchCmd::Audit, dataset),
            };
            commands::bench(&ctx, cmd, &dataset)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
