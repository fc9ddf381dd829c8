//! Event-driven business activity monitoring: a pub/sub bus, a complex event
//! processing engine, a context store, a goal-network runtime that turns
//! detected situations into actions, and a deterministic logistics simulator
//! that closes the loop.

pub mod action;
pub mod audit;
pub mod bus;
pub mod cep;
pub mod context;
pub mod engine;
pub mod event;
pub mod expr;
pub mod frames;
pub mod metrics;
pub mod run;
pub mod san;
pub mod sim;
pub mod syntax;
pub mod tables;
