//! Scenario configuration, read from TOML.
//!
//! A file may name a base scenario with `extends = "other.toml"`; the base is
//! loaded first and the file's tables are merged over it key by key, so a
//! variant only states what it changes (`[trucks.T1] fuel = 25.0`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("`extends` chain loops through {0}")]
    ExtendsLoop(PathBuf),
    #[error("truck {truck} route names unknown stop `{stop}`")]
    UnknownStop { truck: String, stop: String },
    #[error("zone {zone} names unknown customer `{customer}`")]
    UnknownZoneCustomer { zone: String, customer: String },
    #[error("schedule entry at tick {tick} names unknown customer `{customer}`")]
    UnknownScheduledCustomer { tick: u64, customer: String },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: String, value: f64 },
    #[error("{what} must be finite and non-negative, got {value}")]
    Negative { what: String, value: f64 },
    #[error("invalid clock `{0}`; expected HH:MM")]
    BadClock(String),
    #[error("`{0}` is reserved for the depot")]
    ReservedId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneConfig {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    #[serde(default)]
    pub customers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    /// Customer id, or `depot`.
    pub at: String,
    /// Planned arrival tick.
    pub planned: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruckConfig {
    /// Distance units per tick.
    pub speed: f64,
    /// Liters.
    pub fuel: f64,
    /// Liters per distance unit.
    pub fuel_rate: f64,
    pub route: Vec<StopConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduledKind {
    Returnee,
    Order,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledEvent {
    pub tick: u64,
    pub kind: ScheduledKind,
    pub customer: String,
    #[serde(default)]
    pub quantity: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub ticks: u64,
    pub seed: u64,
    /// Treat manual commands as automatic.
    pub auto_apply: bool,
    /// Speed jitter as a fraction of nominal speed, drawn per truck and tick.
    pub jitter: f64,
    /// Clock of day at tick 0.
    pub start_clock: String,
    /// End of the business day.
    pub cutoff: String,
    /// Command targets the action service accepts.
    pub services: Vec<String>,
    /// Wall-clock milliseconds per tick in serve mode.
    pub pace_ms: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            ticks: 480,
            seed: 1,
            auto_apply: false,
            jitter: 0.0,
            start_clock: "08:00".into(),
            cutoff: "17:00".into(),
            services: vec!["gis".into()],
            pace_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub run: RunOptions,
    pub depot: Point,
    pub customers: BTreeMap<String, Point>,
    #[serde(default)]
    pub zones: BTreeMap<String, ZoneConfig>,
    pub trucks: BTreeMap<String, TruckConfig>,
    #[serde(default)]
    pub schedule: Vec<ScheduledEvent>,
}

pub const DEPOT: &str = "depot";

/// Minutes since midnight for an `HH:MM` string.
pub fn parse_clock(s: &str) -> Result<u32, ConfigError> {
    let bad = || ConfigError::BadClock(s.to_string());
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if h > 23 || m > 59 || s.len() != 5 {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_value(parse_value(text, Path::new("<inline>"))?, Path::new("<inline>"))
    }

    /// Load a file, resolving `extends` relative to it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let value = load_value(path, &mut BTreeSet::new())?;
        Self::from_value(value, path)
    }

    fn from_value(value: toml::Value, path: &Path) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |what: String, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::NonPositive { what, value })
            }
        };
        let non_negative = |what: String, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Negative { what, value })
            }
        };
        if self.customers.contains_key(DEPOT) {
            return Err(ConfigError::ReservedId(DEPOT.into()));
        }
        for p in std::iter::once(&self.depot).chain(self.customers.values()) {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(ConfigError::Negative {
                    what: "coordinate".into(),
                    value: if p.x.is_finite() { p.y } else { p.x },
                });
            }
        }
        for (id, z) in &self.zones {
            positive(format!("zone {id} radius"), z.radius)?;
            if !z.x.is_finite() || !z.y.is_finite() {
                return Err(ConfigError::Negative {
                    what: format!("zone {id} center"),
                    value: f64::NAN,
                });
            }
            if let Some(c) = z.customers.iter().find(|c| !self.customers.contains_key(*c)) {
                return Err(ConfigError::UnknownZoneCustomer {
                    zone: id.clone(),
                    customer: c.clone(),
                });
            }
        }
        for (id, t) in &self.trucks {
            positive(format!("truck {id} speed"), t.speed)?;
            non_negative(format!("truck {id} fuel"), t.fuel)?;
            non_negative(format!("truck {id} fuel_rate"), t.fuel_rate)?;
            if let Some(s) = t
                .route
                .iter()
                .find(|s| s.at != DEPOT && !self.customers.contains_key(&s.at))
            {
                return Err(ConfigError::UnknownStop {
                    truck: id.clone(),
                    stop: s.at.clone(),
                });
            }
        }
        if let Some(s) = self.schedule.iter().find(|s| !self.customers.contains_key(&s.customer)) {
            return Err(ConfigError::UnknownScheduledCustomer {
                tick: s.tick,
                customer: s.customer.clone(),
            });
        }
        let jitter = self.run.jitter;
        if !(0.0..1.0).contains(&jitter) {
            return Err(ConfigError::Negative {
                what: "jitter (below 1)".into(),
                value: jitter,
            });
        }
        parse_clock(&self.run.start_clock)?;
        parse_clock(&self.run.cutoff)?;
        Ok(())
    }

    /// Position of a customer or the depot.
    pub fn position(&self, id: &str) -> Option<Point> {
        if id == DEPOT {
            Some(self.depot)
        } else {
            self.customers.get(id).copied()
        }
    }
}

fn parse_value(text: &str, path: &Path) -> Result<toml::Value, ConfigError> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.message().to_string(),
        })
}

fn load_value(path: &Path, seen: &mut BTreeSet<PathBuf>) -> Result<toml::Value, ConfigError> {
    let canonical = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    if !seen.insert(canonical) {
        return Err(ConfigError::ExtendsLoop(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut value = parse_value(&text, path)?;
    let base = match value.as_table_mut().and_then(|t| t.remove("extends")) {
        None => return Ok(value),
        Some(toml::Value::String(b)) => b,
        Some(_) => {
            return Err(ConfigError::Parse {
                path: path.to_path_buf(),
                msg: "`extends` must be a string".into(),
            })
        }
    };
    let base_path = path.parent().unwrap_or(Path::new(".")).join(base);
    let mut merged = load_value(&base_path, seen)?;
    merge(&mut merged, value);
    Ok(merged)
}

/// Tables merge recursively; everything else is replaced.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
