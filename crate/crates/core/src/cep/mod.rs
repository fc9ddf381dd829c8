//! Complex event processing: pattern compilation, incremental detection and
//! the exhaustive reference oracle.

pub mod engine;
pub mod oracle;
pub mod pattern;

pub use engine::{CepEngine, CepError};
pub use oracle::{match_oracle, OracleError};
pub use pattern::{Pattern, PatternError, PatternErrorKind, Policy};
