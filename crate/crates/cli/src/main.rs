use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use cgbench::commands::{self, AnalyzeArgs, SelfPlayArgs, EXIT_FATAL};
use cgbench_analysis::report::AnalyzeOptions;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cgbench", version, about = "Helper/Worker puzzle sessions: serve, self-play, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnnotatorKind {
    Rule,
    External,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the session server for human participants.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Run agent-vs-agent sessions over the condition matrix.
    Selfplay {
        /// Sessions per (condition, role) cell.
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        #[arg(long, default_value = "shared,nonshared")]
        conditions: String,
        #[arg(long, default_value = "helper,worker")]
        roles: String,
        /// oracle or llm:endpoint=<name>,model=<model>
        #[arg(long, default_value = "oracle")]
        helper: String,
        /// oracle, noisy:<rate>, or llm:endpoint=<name>,model=<model>
        #[arg(long, default_value = "oracle")]
        worker: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute metrics and tests over a directory of session logs.
    Analyze {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "rule")]
        annotator: AnnotatorKind,
        /// Endpoint name from the config, for the external annotator.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check the snapshot rules of each view condition over a corpus.
    Audit {
        #[arg(long)]
        corpus: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Cmd::Serve { config, port, host } => {
            let config = commands::load_config(config.as_deref())?;
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cgbench::server::serve(config, addr))?;
            Ok(0)
        }
        Cmd::Selfplay { sessions, conditions, roles, helper, worker, seed, out, jobs, config } => {
            let args = SelfPlayArgs {
                sessions,
                conditions: commands::parse_conditions(&conditions)?,
                roles: commands::parse_roles(&roles)?,
                helper,
                worker,
                seed,
                out,
                jobs,
                config: commands::load_config(config.as_deref())?,
            };
            Ok(commands::selfplay(&args)?.0)
        }
        Cmd::Analyze { corpus, annotator, endpoint, model, out, seed, permutations, alpha, config } => {
            let external = match annotator {
                AnnotatorKind::Rule => None,
                AnnotatorKind::External => match (endpoint, model) {
                    (Some(e), Some(m)) => Some((e, m)),
                    _ => anyhow::bail!("--annotator external needs --endpoint and --model"),
                },
            };
            let args = AnalyzeArgs {
                corpus,
                out,
                external,
                options: AnalyzeOptions { alpha, n_perm: permutations, seed },
                config: commands::load_config(config.as_deref())?,
            };
            commands::analyze(&args)
        }
        Cmd::Audit { corpus } => commands::audit(&corpus),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FATAL as u8)
        }
    }
}
