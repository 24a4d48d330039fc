//! Manifest-driven experiment runner and verification harness for
//! `cohsync-core`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiment;
pub mod manifest;

use cohsync_core::{agent::AgentError, collab::CollabError, graph::GraphError, noncollab::NoncollabError, sim::SimError};
use std::path::PathBuf;
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "COHSYNC_OUT";

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{0}: {1}")]
    Io(PathBuf, String),
    #[error("design failed: {0}")]
    Design(String),
    #[error("simulation failed: {0}")]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl From<NoncollabError> for Error {
    fn from(e: NoncollabError) -> Self {
        Error::Design(e.to_string())
    }
}

impl From<CollabError> for Error {
    fn from(e: CollabError) -> Self {
        Error::Design(e.to_string())
    }
}

impl Error {
    /// 1 for a run that could not finish, 2 for configuration and design
    /// problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Simulation(SimError::BlowUp { .. }) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(path.to_path_buf(), e.to_string())
}

/// Output root: the explicit flag (or environment variable), else the
/// manifest's `output_dir`, else `runs` in the working directory.
pub fn output_root(flag: Option<&std::path::Path>, loaded: &manifest::LoadedManifest) -> PathBuf {
    match (flag, &loaded.manifest.output_dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => manifest::resolve(&loaded.base_dir, p),
        (None, None) => PathBuf::from("runs"),
    }
}
