//! Closed-loop runs (simulator → bus → CEP → SAN → actions → simulator) and
//! replay of recorded runs.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::action::{Decision, OperatorDecision};
use crate::audit::AuditLog;
use crate::engine::{Engine, EngineError, Rejection, ENGINE_SOURCES};
use crate::event::{decode_log, encode_log, DecodeError, Event};
use crate::metrics::RunMetrics;
use crate::san::SanModel;
use crate::sim::{ConfigError, ScenarioConfig, World};

pub const RUN_ETYPE: &str = "RunStarted";
pub const RUN_TOPIC: &str = "sim.run";

pub const EVENTS_FILE: &str = "events.log";
pub const AUDIT_FILE: &str = "audit.log";
pub const CONTEXT_FILE: &str = "context.log";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("corrupt log at line {line}: {source}")]
    CorruptLog { line: usize, source: DecodeError },
    #[error("log does not start with a {RUN_ETYPE} event")]
    MissingRunStart,
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSettings {
    pub seed: u64,
    pub ticks: u64,
    pub auto_apply: bool,
}

impl RunSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        RunSettings {
            seed: cfg.run.seed,
            ticks: cfg.run.ticks,
            auto_apply: cfg.run.auto_apply,
        }
    }
}

/// A decision gathered from an operator channel, applied at the next tick
/// boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedDecision {
    pub directive_id: String,
    pub decision: Decision,
    pub operator: String,
}

/// Hooks into the run loop, used by serve mode.
pub trait RunObserver {
    fn started(&mut self, _engine: &Engine, _world: &World, _events: &[Arc<Event>]) {}

    /// Decisions to apply before the next tick.
    fn poll_decisions(&mut self) -> Vec<QueuedDecision> {
        Vec::new()
    }

    /// Everything published since the previous call, including the effects
    /// of decisions applied at the boundary.
    fn ticked(&mut self, _engine: &Engine, _world: &World, _events: &[Arc<Event>], _rejections: &[Rejection]) {}
}

/// Observer that does nothing.
pub struct Headless;

impl RunObserver for Headless {}

pub struct RunOutcome {
    pub engine: Engine,
    pub world: World,
}

impl RunOutcome {
    pub fn events(&self) -> Vec<Arc<Event>> {
        self.engine.bus().log()
    }

    pub fn event_log(&self) -> String {
        encode_log(self.events().iter().map(|e| e.as_ref()))
    }

    pub fn audit(&self) -> &AuditLog {
        self.engine.audit()
    }

    pub fn context_log(&self) -> String {
        context_log(&self.engine)
    }

    pub fn metrics(&self) -> RunMetrics {
        let events: Vec<Event> = self.events().iter().map(|e| e.as_ref().clone()).collect();
        RunMetrics::compute(&events, self.engine.audit())
    }

    /// Write the four run files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        let io = |path: &Path| {
            let p = path.display().to_string();
            move |source| RunError::Io { path: p, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let metrics = serde_json::to_string_pretty(&self.metrics()).expect("metrics serialize") + "\n";
        for (name, body) in [
            (EVENTS_FILE, self.event_log()),
            (AUDIT_FILE, self.audit().to_text()),
            (CONTEXT_FILE, self.context_log()),
            (METRICS_FILE, metrics),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// One JSON change set per line.
pub fn context_log(engine: &Engine) -> String {
    engine
        .context()
        .journal()
        .iter()
        .map(|c| serde_json::to_string(c).expect("change sets serialize") + "\n")
        .collect()
}

fn run_started(cfg: &ScenarioConfig, s: &RunSettings) -> Event {
    Event::simple("run", RUN_ETYPE, RUN_TOPIC, 0, "sim")
        .with_attr("scenario", cfg.name.as_str())
        .with_attr("seed", s.seed as i64)
        .with_attr("ticks", s.ticks as i64)
        .with_attr("auto_apply", s.auto_apply)
        .with_attr("services", cfg.run.services.join(","))
}

/// Inject `event` and feed any GIS commands it causes back into the world.
fn inject_closed(engine: &mut Engine, world: &mut World, event: Event) -> Result<Vec<Arc<Event>>, EngineError> {
    let mut out = Vec::new();
    let mut queue = std::collections::VecDeque::from([event]);
    while let Some(e) = queue.pop_front() {
        let published = engine.inject(e)?;
        for p in &published {
            if p.etype == "Command" && p.topic == "cmd.gis" {
                queue.extend(world.handle_command(p));
            }
        }
        out.extend(published);
    }
    Ok(out)
}

pub fn run(
    model: Arc<SanModel>,
    cfg: &ScenarioConfig,
    settings: &RunSettings,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome, RunError> {
    let mut world = World::init(cfg, settings.seed)?;
    let mut engine = Engine::new(model, cfg.run.services.iter().cloned(), settings.auto_apply);
    engine.start(0)?;
    let started = inject_closed(&mut engine, &mut world, run_started(cfg, settings))?;
    observer.started(&engine, &world, &started);

    let mut next_decision = 0u64;
    for _ in 0..settings.ticks {
        let mut published = Vec::new();
        for q in observer.poll_decisions() {
            next_decision += 1;
            let dec = OperatorDecision {
                directive_id: q.directive_id,
                decision: q.decision,
                operator: q.operator,
                decided_at: world.now(),
            };
            published.extend(inject_closed(&mut engine, &mut world, dec.to_event(format!("op-{next_decision}")))?);
        }
        for e in world.step() {
            published.extend(inject_closed(&mut engine, &mut world, e)?);
        }
        let rejections = engine.take_rejections();
        observer.ticked(&engine, &world, &published, &rejections);
    }
    Ok(RunOutcome { engine, world })
}

/// Re-drive an engine from a recorded event log. Events the engine produced
/// itself are regenerated; everything else, including operator decisions
/// and simulator responses, is injected in recorded order.
pub fn replay(model: Arc<SanModel>, log: &[Event]) -> Result<Engine, RunError> {
    let first = log.first().filter(|e| e.etype == RUN_ETYPE).ok_or(RunError::MissingRunStart)?;
    let services: Vec<String> = first
        .attr_str("services")
        .unwrap_or_default()
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let auto_apply = first.attr("auto_apply").and_then(|v| v.as_bool()).unwrap_or(false);
    let mut engine = Engine::new(model, services, auto_apply);
    engine.start(0)?;
    for e in log {
        if !ENGINE_SOURCES.contains(&e.source.as_str()) {
            engine.inject(e.clone())?;
        }
    }
    Ok(engine)
}

/// Decode an events file.
pub fn read_log(text: &str) -> Result<Vec<Event>, RunError> {
    decode_log(text).map_err(|(line, source)| RunError::CorruptLog { line, source })
}
