//! `schemrev`: review schematics against component datasheets.
//!
//! Exit codes for `run`: 0 complete, 3 partial (time budget hit), 1 failed.
//! Credentials for the live backend are read from the variable named by
//! `backend.api_key_env` (default `SCHEMREV_API_KEY`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use schemrev_core::gateway::RecordingBackend;
use schemrev_core::heuristic::HeuristicBackend;
use schemrev_core::pipeline::{Mode, Overrides, Pipeline, RunConfig, RunStatus};
use schemrev_core::schematic::{augment_netlist, diff_pages, ingest_schematic, serialize_page_xml, serialize_xml, Schematic};

#[derive(Parser)]
#[command(name = "schemrev", version, about = "Datasheet-grounded schematic review")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Review a schematic and post comments to the configured sink.
    Run(RunArgs),
    /// Print the canonical XML form of a schematic (or one page).
    Xml {
        #[arg(long)]
        schematic: PathBuf,
        #[arg(long)]
        page: Option<String>,
    },
    /// List pages whose content differs from a base schematic.
    Diff {
        #[arg(long)]
        schematic: PathBuf,
        #[arg(long)]
        base: PathBuf,
    },
    /// Run with the rule-based backend and record every agent response as
    /// a mock fixture.
    RecordFixtures {
        #[command(flatten)]
        run: RunArgs,
        /// Fixture directory; defaults to the mock backend's `fixture_path`.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Remove existing fixtures first.
        #[arg(long)]
        clean: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    schematic: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base schematic for design review mode.
    #[arg(long)]
    base: Option<PathBuf>,
    /// `design_review` or `full_analysis`.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    time_limit_secs: Option<f64>,
    /// Review runs per functional group.
    #[arg(long)]
    runs: Option<usize>,
    /// Critic score that ends the datasheet attempt loop.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Always analyze this page in design review mode (repeatable).
    #[arg(long = "page")]
    pages: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mode = match (self.mode, &self.base) {
            (None, Some(_)) => Some(Mode::DesignReview),
            (m, _) => m,
        };
        cfg.apply(Overrides {
            mode,
            base_schematic: self.base.clone(),
            time_budget_secs: self.time_limit_secs,
            runs: self.runs,
            critic_threshold: self.threshold,
            out_dir: self.out.clone(),
            cache_dir: self.cache_dir.clone(),
            trace_out: self.trace_out.clone(),
            pages: self.pages.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(path: &Path) -> anyhow::Result<Schematic> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let s = ingest_schematic(&raw, None).with_context(|| format!("parsing {}", path.display()))?;
    augment_netlist(&s).with_context(|| format!("building nets for {}", path.display()))
}

async fn run(args: RunArgs) -> anyhow::Result<RunStatus> {
    let cfg = args.config()?;
    let report = Pipeline::new(cfg).run(&args.schematic).await?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.status)
}

async fn record(args: RunArgs, fixtures: Option<PathBuf>, clean: bool) -> anyhow::Result<RunStatus> {
    let mut cfg = args.config()?;
    let dir = match fixtures.or_else(|| cfg.backend.as_ref().and_then(|b| b.fixture_path.clone())) {
        Some(d) => d,
        None => bail!("no fixture directory: pass --fixtures or set backend.fixture_path"),
    };
    if clean && dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    // a cold cache makes every retrieval call go through the recorder
    let cache = tempfile::tempdir()?;
    cfg.cache_dir = cache.path().to_path_buf();
    let backend = Arc::new(RecordingBackend::new(HeuristicBackend, &dir));
    let report = Pipeline::new(cfg).with_backend(backend).run(&args.schematic).await?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("fixtures written to {}", dir.display());
    Ok(report.status)
}

async fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => Ok(ExitCode::from(run(args).await?.exit_code() as u8)),
        Command::RecordFixtures { run, fixtures, clean } => {
            Ok(ExitCode::from(record(run, fixtures, clean).await?.exit_code() as u8))
        }
        Command::Xml { schematic, page } => {
            let s = load(&schematic)?;
            match page {
                None => print!("{}", serialize_xml(&s)),
                Some(id) => match s.page(&id) {
                    Some(p) => print!("{}", serialize_page_xml(p)),
                    None => bail!("no page `{id}` in {}", schematic.display()),
                },
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Diff { schematic, base } => {
            for id in diff_pages(&load(&base)?, &load(&schematic)?) {
                println!("{id}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("SCHEMREV_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(RunStatus::Failed.exit_code() as u8)
        }
    }
}
