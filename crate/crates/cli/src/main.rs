//! `beam`: validate models, run scenarios (optionally serving them live),
//! replay recorded runs, and inspect their logs.
//!
//! Exit codes: 0 ok, 1 domain failure, 2 usage or I/O failure.

mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::anyhow;
use beam_core::audit::AuditLog;
use beam_core::cep::{match_oracle, Pattern};
use beam_core::event::encode;
use beam_core::metrics::RunMetrics;
use beam_core::run::{self, read_log, Headless, RunError, RunSettings, AUDIT_FILE, EVENTS_FILE};
use beam_core::san::{load_san, LoadError, SanModel};
use beam_core::sim::{ConfigError, ScenarioConfig, TICK_MS};
use beam_core::tables::Tables;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beam", version, about = "Business event awareness monitor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a SAN model; diagnostics go to standard error.
    Validate { san_file: PathBuf },
    /// Run a scenario through the closed loop and write its logs.
    Run(RunArgs),
    /// Re-drive the engine from a recorded event log and print the audit log.
    Replay {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Compare against this audit log instead of printing; exit 1 on mismatch.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Print the reference matcher's detections for one pattern over a small log.
    Oracle {
        /// Pattern text, a file holding it, or a pattern name from --model.
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        log: PathBuf,
        /// Model supplying named patterns and tables.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Recompute run metrics from the logs in an output directory.
    Metrics {
        #[arg(long, env = "BEAM_OUT")]
        out: PathBuf,
    },
    /// Render the notification feed of a recorded run.
    Feed {
        #[arg(long)]
        log: PathBuf,
        /// Only this audience.
        #[arg(long)]
        audience: Option<String>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long, env = "BEAM_OUT")]
    out: PathBuf,
    /// Apply manual commands without waiting for an operator.
    #[arg(long)]
    auto_apply: bool,
    /// Stream the run to dashboard clients over a websocket.
    #[arg(long)]
    serve: bool,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Wall-clock milliseconds per tick while serving; defaults to the scenario's.
    #[arg(long)]
    pace_ms: Option<u64>,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn domain(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: error.into() }
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => Failure::io(e),
            LoadError::Invalid { ref path, ref diagnostics } => {
                for d in diagnostics {
                    eprintln!("{}:{d}", path.display());
                }
                Failure::domain(e)
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::io(e),
            _ => Failure::domain(e),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Io { .. } => Failure::io(e),
            RunError::Config(c) => c.into(),
            _ => Failure::domain(e),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(anyhow!("cannot read {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Arc<SanModel>, Failure> {
    Ok(Arc::new(load_san(path)?))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let cfg = ScenarioConfig::load(&args.scenario)?;
    let mut settings = RunSettings::from_config(&cfg);
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    if let Some(ticks) = args.ticks {
        settings.ticks = ticks;
    }
    settings.auto_apply |= args.auto_apply;

    let outcome = if args.serve {
        let pace = Duration::from_millis(args.pace_ms.unwrap_or(cfg.run.pace_ms));
        let gateway = serve::Gateway::bind(args.port).map_err(Failure::io)?;
        eprintln!("serving on ws://{}", gateway.addr());
        let mut observer = serve::ServeObserver::new(gateway.clone(), &cfg.name, &model.name, pace);
        let outcome = run::run(model, &cfg, &settings, &mut observer)?;
        gateway.shutdown();
        outcome
    } else {
        run::run(model, &cfg, &settings, &mut Headless)?
    };
    outcome.write(&args.out)?;
    let m = outcome.metrics();
    println!(
        "{}: ticks={} detections={} directives={} vetoes={} recommendations={} -> {}",
        cfg.name,
        m.ticks,
        m.detections.values().sum::<u64>(),
        m.directives.values().flat_map(|o| o.values()).sum::<u64>(),
        m.vetoes,
        m.recommendations.created,
        args.out.display()
    );
    Ok(())
}

fn cmd_replay(model: &Path, log: &Path, check: Option<&Path>) -> Result<(), Failure> {
    let model = load_model(model)?;
    let events = read_log(&read(log)?)?;
    let engine = run::replay(model, &events)?;
    let audit = engine.audit().to_text();
    match check {
        None => print!("{audit}"),
        Some(path) => {
            let want = read(path)?;
            if want != audit {
                let line = want
                    .lines()
                    .zip(audit.lines())
                    .position(|(a, b)| a != b)
                    .unwrap_or(want.lines().count().min(audit.lines().count()));
                return Err(Failure::domain(anyhow!(
                    "replayed audit log differs from {} at line {}",
                    path.display(),
                    line + 1
                )));
            }
            eprintln!("replay matches {} ({} entries)", path.display(), engine.audit().len());
        }
    }
    Ok(())
}

fn cmd_oracle(pattern: &str, log: &Path, model: Option<&Path>) -> Result<(), Failure> {
    let model = model.map(load_model).transpose()?;
    let named = model.as_ref().and_then(|m| m.pattern(pattern)).cloned();
    let p = match named {
        Some(p) => p,
        None => {
            let path = Path::new(pattern);
            let src = if path.is_file() { read(path)? } else { pattern.to_string() };
            let tables = model.as_ref().map_or_else(|| Arc::new(Tables::new()), |m| m.tables.clone());
            let p = Pattern::compile(src.trim(), tables).map_err(|errs| {
                for e in &errs {
                    eprintln!("pattern:{e}");
                }
                Failure::domain(anyhow!("{} error(s) in pattern", errs.len()))
            })?;
            Arc::new(p)
        }
    };
    let events = read_log(&read(log)?)?;
    let detections = match_oracle(&p, &events).map_err(Failure::domain)?;
    for d in &detections {
        println!("{}", encode(d));
    }
    Ok(())
}

fn cmd_metrics(out: &Path) -> Result<(), Failure> {
    let events = read_log(&read(&out.join(EVENTS_FILE))?)?;
    let audit = AuditLog::parse(&read(&out.join(AUDIT_FILE))?).map_err(Failure::domain)?;
    let m = RunMetrics::compute(&events, &audit);
    println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
    Ok(())
}

fn cmd_feed(log: &Path, audience: Option<&str>) -> Result<(), Failure> {
    let events = read_log(&read(log)?)?;
    for e in events.iter().filter(|e| e.etype == "Notification") {
        let aud = e.topic.strip_prefix("notify.").unwrap_or(&e.topic);
        if audience.is_some_and(|a| a != aud) {
            continue;
        }
        let minute = e.t_end / TICK_MS;
        println!(
            "[+{:02}:{:02}] {aud}: {}",
            minute / 60,
            minute % 60,
            e.attr_str("message").unwrap_or_default()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { san_file } => load_san(&san_file).map(drop).map_err(Failure::from),
        Command::Run(args) => cmd_run(args),
        Command::Replay { model, log, check } => cmd_replay(&model, &log, check.as_deref()),
        Command::Oracle { pattern, log, model } => cmd_oracle(&pattern, &log, model.as_deref()),
        Command::Metrics { out } => cmd_metrics(&out),
        Command::Feed { log, audience } => cmd_feed(&log, audience.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
