use std::fmt;

use serde::Serialize;

use super::fingerprint::{param_digest, script_digest, Digest};
use super::state::StateStore;
use super::RunContext;
use crate::depgraph::DependencyGraph;
use crate::manifest::TaskInstance;
use crate::paths;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", content = "path", rename_all = "snake_case")]
pub enum StaleReason {
    ScriptChanged,
    InputChanged(String),
    ParamChanged,
    CommandChanged,
    TargetMissing(String),
}

impl fmt::Display for StaleReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StaleReason::ScriptChanged => f.write_str("script changed"),
            StaleReason::InputChanged(p) => write!(f, "input changed: {p}"),
            StaleReason::ParamChanged => f.write_str("parameters changed"),
            StaleReason::CommandChanged => f.write_str("command changed"),
            StaleReason::TargetMissing(p) => write!(f, "target missing: {p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum InstanceStatus {
    UpToDate,
    NeverRun,
    /// Always carries at least one reason.
    Stale(Vec<StaleReason>),
    MissingRawInput(String),
}

impl InstanceStatus {
    pub fn is_up_to_date(&self) -> bool {
        matches!(self, InstanceStatus::UpToDate)
    }

    pub fn label(&self) -> &'static str {
        match self {
            InstanceStatus::UpToDate => "up-to-date",
            InstanceStatus::NeverRun => "never-run",
            InstanceStatus::Stale(_) => "stale",
            InstanceStatus::MissingRawInput(_) => "missing-input",
        }
    }
}

impl fmt::Display for InstanceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceStatus::Stale(reasons) => {
                let r: Vec<String> = reasons.iter().map(ToString::to_string).collect();
                write!(f, "stale ({})", r.join("; "))
            }
            InstanceStatus::MissingRawInput(p) => write!(f, "missing-input ({p})"),
            other => f.write_str(other.label()),
        }
    }
}

/// Compares the recorded fingerprint of `instance` with the filesystem.
///
/// Raw inputs (deps nothing produces) that do not exist win over everything
/// else; otherwise every applicable stale reason is collected.
pub fn status(
    instance: &TaskInstance,
    graph: &DependencyGraph,
    state: &StateStore,
    ctx: &RunContext,
) -> InstanceStatus {
    for dep in &instance.deps {
        if graph.raw_inputs().contains(dep) && !paths::resolve(ctx.root, dep).exists() {
            return InstanceStatus::MissingRawInput(dep.clone());
        }
    }
    let Some(record) = state.get(&instance.instance_id) else {
        return InstanceStatus::NeverRun;
    };

    let mut reasons = Vec::new();
    match script_digest(instance, ctx) {
        Ok(d) if d == record.script => {}
        _ => reasons.push(StaleReason::ScriptChanged),
    }
    for dep in &instance.deps {
        let current = Digest::of_file(&paths::resolve(ctx.root, dep)).ok();
        if current.as_ref() != record.inputs.get(dep) {
            reasons.push(StaleReason::InputChanged(dep.clone()));
        }
    }
    for old in record.inputs.keys() {
        if !instance.deps.contains(old) {
            reasons.push(StaleReason::InputChanged(old.clone()));
        }
    }
    if param_digest(instance, ctx) != record.params {
        reasons.push(StaleReason::ParamChanged);
    }
    if Digest::of_bytes(instance.command.as_bytes()) != record.command {
        reasons.push(StaleReason::CommandChanged);
    }
    for t in &instance.targets {
        if !paths::resolve(ctx.root, t).exists() {
            reasons.push(StaleReason::TargetMissing(t.clone()));
        }
    }

    if reasons.is_empty() {
        InstanceStatus::UpToDate
    } else {
        InstanceStatus::Stale(reasons)
    }
}
