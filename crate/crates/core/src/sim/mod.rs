//! Deterministic simulator of the pilot world: depot, customers, trucks on
//! routes, geofence zones and scripted CRM requests. It plays the CRM, WMS
//! and GIS adapters and consumes reroute commands.

pub mod config;
pub mod world;

pub use config::{ConfigError, Point, ScenarioConfig};
pub use world::{TruckState, World, Zone, TICK_MS};
