//! Incremental execution: fingerprints, the state store, staleness, planning
//! and running task commands.
//!
//! Staleness is decided from file contents (SHA-256), never from timestamps.

mod execute;
mod fingerprint;
mod plan;
mod state;
mod status;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::manifest::ParameterSet;

pub use execute::{
    describe_failure, execute, ExecutedStep, RunSummary, StepFailure, RECORDING_ENV,
};
pub use fingerprint::{fingerprint, script_path, Digest, Fingerprint};
pub use plan::{plan, schedule, ExecutionPlan, FailurePolicy, PlannedStep, ScheduleReason};
pub use state::{StateRecord, StateStore, STATE_DIR, STATE_FILE};
pub use status::{status, InstanceStatus, StaleReason};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("state store {} is unreadable: {reason}", path.display())]
    CorruptState { path: PathBuf, reason: String },
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
}

/// Where commands run and which parameter values are in force.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub root: &'a Path,
    pub params: &'a ParameterSet,
}
