use std::path::PathBuf;

use thiserror::Error;

use crate::market::Violation;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DiffError {
    #[error("backward() needs a scalar root, got a {rows}x{cols} node")]
    NonScalarRoot { rows: usize, cols: usize },
}

/// Where in training a numerical failure happened.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingSite {
    pub round: usize,
    pub epoch: usize,
    pub phase: &'static str,
    pub agent: Option<usize>,
}

impl std::fmt::Display for TrainingSite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "round {} {} epoch {}", self.round, self.phase, self.epoch)?;
        if let Some(n) = self.agent {
            write!(f, " agent {n}")?;
        }
        Ok(())
    }
}

#[derive(Error, Debug)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid market configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("non-finite {what} at {site}")]
    NonFinite { what: String, site: TrainingSite, last_checkpoint: Option<PathBuf> },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
