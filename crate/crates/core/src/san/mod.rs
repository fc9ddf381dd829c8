//! Situation-action networks: the goal model and its runtime.

pub mod model;
pub mod runtime;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use model::{parse_san, ActionKind, ActionNode, Diagnostic, Goal, Mode, SanError, SanModel};
pub use runtime::{Directive, GoalState, SanRuntime, SubChange};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} error(s) in {path}", diagnostics.len())]
    Invalid { path: PathBuf, diagnostics: Vec<Diagnostic> },
}

/// Read and validate a SAN file; table files resolve relative to it.
pub fn load_san(path: &Path) -> Result<SanModel, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_san(&text, &mut |file| {
        std::fs::read_to_string(dir.join(file)).map_err(|e| format!("cannot read {file}: {e}"))
    })
    .map_err(|diagnostics| LoadError::Invalid {
        path: path.to_path_buf(),
        diagnostics,
    })
}
