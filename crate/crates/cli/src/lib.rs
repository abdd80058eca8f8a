//! Experiment specs, sweeps and report writers behind the `sparsim` binary.

use std::fmt;
use std::path::PathBuf;

pub mod report;
pub mod spec;
pub mod sweep;

pub use spec::{load_spec, parse_spec, ExperimentSpec, SpecError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{0}")]
    Usage(String),
    #[error("{} cell(s) failed:\n{}", .0.len(), Failures(.0))]
    Cells(Vec<CellFailure>),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

struct Failures<'a>(&'a [CellFailure]);

impl fmt::Display for Failures<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {}: {}", c.cell, c.error)?;
        }
        Ok(())
    }
}
