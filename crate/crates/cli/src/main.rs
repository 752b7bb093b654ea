//! `explorex` command line: serve the HTTP API, drive a target through a
//! synthetic Bernoulli environment, rebuild feedback state from offline
//! logs, and query a running service for target stats.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use explorex_core::registry::{Engine, EngineOptions};
use explorex_core::service::{self, ServiceState};
use explorex_core::simulate::{run_simulation, write_csv, SimEnvironment};
use explorex_core::{Error, FeedbackStore, MetricSpec, StoreOptions, TargetConfig};

/// Problems reading or writing local files exit 2; everything else that
/// fails exits 1 (clap's own usage errors also exit 2).
const EXIT_FILE: u8 = 2;
const EXIT_RUN: u8 = 1;

struct Failure {
    message: String,
    code: u8,
}

impl Failure {
    fn file(path: &Path, err: impl std::fmt::Display) -> Self {
        Failure { message: format!("{}: {err}", path.display()), code: EXIT_FILE }
    }

    fn run(err: impl std::fmt::Display) -> Self {
        Failure { message: err.to_string(), code: EXIT_RUN }
    }
}

#[derive(Parser)]
#[command(name = "explorex", version, about = "Online explore-exploit decision engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Drive a candidate-selection target through a Bernoulli environment
    /// and write per-epoch display shares to CSV.
    Simulate(SimulateArgs),
    /// Rebuild feedback state from offline logs and print the counters.
    Replay(ReplayArgs),
    /// Fetch live stats for one target from a running service.
    Stats(StatsArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// Bind address.
    #[arg(long, env = "EXPLOREX_ADDR", default_value = service::DEFAULT_ADDR)]
    addr: String,
    /// Per-decision explore budget in milliseconds; expiry degrades the
    /// call to a passthrough, never an error.
    #[arg(long, env = "EXPLOREX_DEADLINE_MS", default_value_t = service::DEFAULT_DEADLINE_MS)]
    deadline_ms: u64,
    /// Target config JSON to register at boot (repeatable).
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Subscribe every preloaded target immediately.
    #[arg(long)]
    subscribe: bool,
    /// Append exposure records here as JSONL.
    #[arg(long)]
    exposure_log: Option<PathBuf>,
    /// Append feedback events here as JSONL.
    #[arg(long)]
    events_log: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Target config JSON; must be a candidate_selection target.
    #[arg(long)]
    config: PathBuf,
    /// Environment JSON: candidates with true rates, rounds, epoch_size, seed.
    #[arg(long)]
    env: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Override the environment's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Append exposure records here as JSONL.
    #[arg(long)]
    exposure_log: Option<PathBuf>,
    /// Append feedback events here as JSONL.
    #[arg(long)]
    events_log: Option<PathBuf>,
    /// Refresh candidate stats every this many explored decisions.
    #[arg(long, default_value_t = 1000)]
    refresh_every: u64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Exposure log (JSONL of exposure records).
    #[arg(long)]
    log: PathBuf,
    /// Feedback-event log (JSONL); without it only pulls are rebuilt.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Extra metric to join, as name=numerator/denominator (repeatable).
    /// ctr (click/display) and acceptance_rate (accept/display) are built in.
    #[arg(long = "metric")]
    metrics: Vec<String>,
}

#[derive(Args)]
struct StatsArgs {
    /// Target id to query.
    #[arg(long)]
    target: String,
    /// Service address (host:port).
    #[arg(long, env = "EXPLOREX_ADDR", default_value = service::DEFAULT_ADDR)]
    addr: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(args) => cmd_serve(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Stats(args) => cmd_stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

/// Unreadable file -> exit 2; readable but invalid -> exit 1.
fn load_target(path: &Path) -> Result<TargetConfig, Failure> {
    TargetConfig::from_file(path).map_err(|err| match err {
        Error::Io(_) => Failure::file(path, err),
        other => Failure::run(format!("{}: {other}", path.display())),
    })
}

fn load_env(path: &Path) -> Result<SimEnvironment, Failure> {
    SimEnvironment::from_file(path).map_err(|err| match err {
        Error::Io(_) => Failure::file(path, err),
        other => Failure::run(format!("{}: {other}", path.display())),
    })
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let options = EngineOptions {
        store: StoreOptions {
            exposure_log: args.exposure_log,
            events_log: args.events_log,
            ..StoreOptions::default()
        },
        ..EngineOptions::default()
    };
    let engine = Arc::new(Engine::new(options).map_err(Failure::run)?);
    for path in &args.configs {
        let config = load_target(path)?;
        let target_id = config.target_id.clone();
        engine
            .register_target(config)
            .map_err(|err| Failure::run(format!("{}: {err}", path.display())))?;
        if args.subscribe {
            engine.subscribe(&target_id).map_err(Failure::run)?;
        }
        log::info!("registered target {target_id:?}");
    }
    let state = ServiceState { engine, deadline: Duration::from_millis(args.deadline_ms) };
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::run)?;
    runtime.block_on(service::serve(&args.addr, state)).map_err(Failure::run)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let config = load_target(&args.config)?;
    let target_id = config.target_id.clone();
    let mut env = load_env(&args.env)?;
    if let Some(seed) = args.seed {
        env.seed = seed;
    }
    // Open the output before the run so a bad path fails fast.
    let out = File::create(&args.out).map_err(|err| Failure::file(&args.out, err))?;
    let options = EngineOptions {
        refresh_every_decisions: args.refresh_every,
        // Wall-clock refresh would make runs nondeterministic.
        refresh_every_ms: None,
        store: StoreOptions {
            exposure_log: args.exposure_log,
            events_log: args.events_log,
            ..StoreOptions::default()
        },
    };
    let engine = Engine::new(options).map_err(Failure::run)?;
    engine.register_target(config).map_err(Failure::run)?;
    let reports = run_simulation(&engine, &target_id, &env).map_err(Failure::run)?;
    write_csv(&reports, &env, out).map_err(Failure::run)?;
    let decisions = reports.last().map_or(0, |report| report.cumulative_decisions);
    println!("wrote {} epochs ({decisions} decisions) to {}", reports.len(), args.out.display());
    if let Some(last) = reports.last() {
        let mut shares: Vec<_> = last.display_share.iter().collect();
        shares.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
        let line =
            shares.iter().map(|(id, share)| format!("{id}={share:.3}")).collect::<Vec<_>>();
        println!("final epoch shares: {}", line.join(" "));
    }
    Ok(())
}

/// `name=numerator/denominator`, e.g. `ctr=click/display`.
fn parse_metric(raw: &str) -> Result<(String, MetricSpec), Failure> {
    let bad = || Failure::run(format!("bad metric {raw:?}; expected name=numerator/denominator"));
    let (name, events) = raw.split_once('=').ok_or_else(bad)?;
    let (numerator, denominator) = events.split_once('/').ok_or_else(bad)?;
    if name.is_empty() || numerator.is_empty() || denominator.is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), MetricSpec::ratio(numerator, denominator)))
}

fn cmd_replay(args: ReplayArgs) -> Result<(), Failure> {
    let mut metrics = BTreeMap::new();
    for raw in &args.metrics {
        let (name, spec) = parse_metric(raw)?;
        metrics.insert(name, spec);
    }
    let store = FeedbackStore::replay_offline_log(
        &args.log,
        args.events.as_deref(),
        &metrics,
        StoreOptions::default(),
    )
    .map_err(|err| match err {
        Error::NotFound(_) | Error::Io(_) => Failure { message: err.to_string(), code: EXIT_FILE },
        other => Failure::run(other),
    })?;
    let digest = store.digest();
    let counters = &digest.monitoring;
    println!("exposures logged     {}", counters.exposures_logged);
    println!("duplicate exposures  {}", counters.duplicate_exposures);
    println!("events ingested      {}", counters.events_ingested);
    println!("duplicate events     {}", counters.duplicate_events);
    println!("orphaned events      {}", counters.orphaned_events);
    println!("ordering violations  {}", counters.ordering_violations);
    println!("malformed lines      {}", counters.malformed_lines);
    for (event, count) in &counters.matched_events {
        println!("matched {event:<12} {count}");
    }
    for ((target, transformer), per_candidate) in &digest.data.pulls {
        let pulls: u64 = per_candidate.values().sum();
        println!("pulls {target}/{transformer}  {pulls}");
    }
    println!("max event timestamp  {}", digest.data.max_ts);
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), Failure> {
    let url = format!("http://{}/stats/{}", args.addr, args.target);
    let response = reqwest::blocking::get(&url).map_err(Failure::run)?;
    let status = response.status();
    let body: serde_json::Value = response.json().map_err(Failure::run)?;
    let pretty = serde_json::to_string_pretty(&body).map_err(Failure::run)?;
    if status.is_success() {
        println!("{pretty}");
        Ok(())
    } else {
        Err(Failure::run(format!("{status}: {pretty}")))
    }
}
