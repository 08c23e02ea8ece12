//! Core of stepline: a build tool for script-based analysis pipelines.
//!
//! A pipeline is declared in one `pipeline.toml` manifest. Tasks run either
//! once per recording or once across all recordings; the files they declare
//! induce a dependency graph; content fingerprints decide what is up to date.

pub mod manifest;
pub mod depgraph;
pub mod engine;
pub mod paths;
pub mod report;
pub mod conformance;

pub use manifest::{
    instantiate_tasks, load_manifest, parse_manifest, parse_manifest_lenient, ManifestError,
    ParamValue, ParameterSet, PipelineSpec, RecordingId, TaskInstance, TaskKind, TaskSpec,
};
pub use depgraph::{DependencyGraph, GraphError};
pub use engine::{
    execute, plan, status, EngineError, ExecutionPlan, InstanceStatus, RunContext, RunSummary,
    StateStore,
};
pub use report::{write_reports, ReportError, ReportScope};
pub use conformance::{
    classify_scripts, lint, lint_manifest_text, summarize_scripts, Finding, LineStats, LintError,
    RuleId, ScriptKind, Severity,
};
