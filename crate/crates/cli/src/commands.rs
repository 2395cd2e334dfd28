//! Batch subcommands. Each returns the process exit code.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use cgbench_agents::llm::HttpChatBackend;
use cgbench_agents::selfplay::{matrix_configs, run_session, SelfPlayOptions, SessionRun};
use cgbench_agents::AgentContext;
use cgbench_analysis::annotate::{ActAnnotator, ExternalAnnotator, RuleBasedAnnotator};
use cgbench_analysis::report::{analyze_corpus, write_outputs, AnalyzeOptions};
use cgbench_core::config::{AgentSpec, Seat, ViewCondition};
use rayon::prelude::*;

use crate::app_config::AppConfig;
use crate::audit::audit_corpus;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

pub fn load_config(path: Option<&Path>) -> anyhow::Result<AppConfig> {
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None => Ok(AppConfig::default()),
    }
}

pub fn parse_conditions(s: &str) -> anyhow::Result<Vec<ViewCondition>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v = match part.to_ascii_lowercase().as_str() {
            "shared" => ViewCondition::Shared,
            "nonshared" | "non_shared" | "non-shared" => ViewCondition::NonShared,
            other => bail!("unknown condition {other:?} (expected shared or nonshared)"),
        };
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        bail!("no conditions given");
    }
    Ok(out)
}

pub fn parse_roles(s: &str) -> anyhow::Result<Vec<Seat>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let seat: Seat = part.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
        if !out.contains(&seat) {
            out.push(seat);
        }
    }
    if out.is_empty() {
        bail!("no roles given");
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SelfPlayArgs {
    pub sessions: usize,
    pub conditions: Vec<ViewCondition>,
    pub roles: Vec<Seat>,
    pub helper: String,
    pub worker: String,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub config: AppConfig,
}

/// Runs every session, prints one summary line each, in matrix order.
pub fn selfplay(args: &SelfPlayArgs) -> anyhow::Result<(i32, Vec<SessionRun>)> {
    let helper = AgentSpec::parse_for_seat(&args.helper, Seat::Helper)?;
    let worker = AgentSpec::parse_for_seat(&args.worker, Seat::Worker)?;
    if helper.is_human() || worker.is_human() {
        bail!("self-play needs an agent in both seats");
    }
    let puzzle = args.config.load_puzzle()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ctx = AgentContext {
        catalog: Arc::new(puzzle.catalog),
        trials: Arc::new(puzzle.trials),
        endpoints: args.config.endpoints.clone(),
        seed: args.seed,
    };
    let mut configs = matrix_configs(args.sessions, &args.conditions, &args.roles, &helper, &worker, args.seed);
    for c in &mut configs {
        c.trial_set_ref = args.config.trial_set_ref();
    }
    let options = SelfPlayOptions { durable: args.config.durable_logs, ..SelfPlayOptions::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs.unwrap_or(0)).build()?;
    let results: Vec<_> = pool.install(|| {
        configs
            .into_par_iter()
            .map(|c| {
                let id = c.session_id.clone();
                (id, run_session(c, &ctx, Some(&args.out), options))
            })
            .collect()
    });
    let mut code = EXIT_OK;
    let mut runs = Vec::new();
    for (id, r) in results {
        match r {
            Ok(run) => {
                println!("{}", run.summary_line());
                if run.failure.is_some() {
                    code = EXIT_PARTIAL;
                }
                runs.push(run);
            }
            Err(e) => {
                println!("{id}  FAILED ({e})");
                code = EXIT_PARTIAL;
            }
        }
    }
    Ok((code, runs))
}

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub external: Option<(String, String)>,
    pub options: AnalyzeOptions,
    pub config: AppConfig,
}

pub fn analyze(args: &AnalyzeArgs) -> anyhow::Result<i32> {
    let puzzle = args.config.load_puzzle()?;
    let annotator: Box<dyn ActAnnotator> = match &args.external {
        None => Box::new(RuleBasedAnnotator),
        Some((endpoint, model)) => {
            let ep = args
                .config
                .endpoints
                .get(endpoint)
                .with_context(|| format!("endpoint {endpoint:?} is not defined in the config"))?;
            let backend = HttpChatBackend::new(ep.clone(), model.clone())?;
            Box::new(ExternalAnnotator::new(Box::new(backend), model.clone()))
        }
    };
    let analysis = analyze_corpus(&args.corpus, &puzzle, annotator.as_ref(), &args.options)?;
    let files = write_outputs(&analysis, &args.out)?;
    for k in &analysis.report.corpus.skipped {
        eprintln!("warning: skipped {}: {}", k.file, k.reason);
    }
    print!("{}", cgbench_analysis::report::summary_text(&analysis.report));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(if analysis.report.corpus.skipped.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

pub fn audit(corpus: &Path) -> anyhow::Result<i32> {
    let results = audit_corpus(corpus)?;
    if results.is_empty() {
        bail!("no session logs found in {}", corpus.display());
    }
    let mut code = EXIT_OK;
    for (path, r) in results {
        let name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        match r {
            Ok(a) if a.passed() => println!(
                "PASS {}  view={}  snapshots={}  acting-worker-messages={}",
                a.session_id,
                a.view.as_str(),
                a.snapshots,
                a.worker_messages_with_actions
            ),
            Ok(a) => {
                code = EXIT_PARTIAL;
                println!("FAIL {}  view={}", a.session_id, a.view.as_str());
                for v in &a.violations {
                    println!("  {v}");
                }
            }
            Err(e) => {
                code = EXIT_PARTIAL;
                println!("FAIL {name}  unreadable: {e}");
            }
        }
    }
    Ok(code)
}
