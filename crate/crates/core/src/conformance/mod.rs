//! Static checks of a manifest and its script directory.
//!
//! | rule | severity | finding |
//! |------|----------|---------|
//! | L1 | error   | one script file used by several tasks |
//! | L2 | error   | per-recording / aggregate split broken |
//! | L3 | warning | target nobody reads, task not marked `final` |
//! | L4 | error   | task without targets |
//! | L5 | warning | task without report items and without `no_report` |
//! | L6 | error   | parameter, template, task or recording defined twice |
//! | L7 | warning | file in the script directory outside the pipeline |
//! | L8 | warning | numbered steps out of manifest order |
//!
//! L2 only sees declared interfaces. A per-recording script that loops over
//! every recording internally is invisible here.

mod classify;
mod stats;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::engine::script_path;
use crate::manifest::{
    instantiate_tasks, parse_manifest_lenient, ManifestError, PipelineSpec, TaskInstance,
    TaskKind, RECORDING,
};
use crate::paths;

pub use classify::{classify_name, classify_scripts, official_scripts, ScriptClass, ScriptKind};
pub use stats::{
    count_lines, default_comment_prefixes, summarize_scripts, AggregateStats, LineCounts,
    LineStats, DEFAULT_COMMENT_PREFIX,
};

#[derive(Debug, Error)]
pub enum LintError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("scanning {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum RuleId {
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    L7,
    L8,
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub rule_id: RuleId,
    pub severity: Severity,
    pub subject: String,
    pub message: String,
}

impl Finding {
    fn new(rule_id: RuleId, subject: impl Into<String>, message: impl Into<String>) -> Self {
        let severity = match rule_id {
            RuleId::L1 | RuleId::L2 | RuleId::L4 | RuleId::L6 => Severity::Error,
            RuleId::L3 | RuleId::L5 | RuleId::L7 | RuleId::L8 => Severity::Warning,
        };
        Finding {
            rule_id,
            severity,
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}: {}",
            self.rule_id, self.severity, self.subject, self.message
        )
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

/// Lints manifest text, so that duplicate definitions (which a strict parse
/// rejects outright) are reported next to everything else.
pub fn lint_manifest_text(
    text: &str,
    root: &Path,
    script_dir: &Path,
) -> Result<Vec<Finding>, LintError> {
    let (mut spec, problems) = parse_manifest_lenient(text)?;
    spec.root = root.to_path_buf();
    let mut findings = lint(&spec, script_dir)?;
    for p in problems {
        if let ManifestError::DuplicateDefinition { kind, name, scope } = p {
            findings.push(Finding::new(
                RuleId::L6,
                name.clone(),
                format!("{kind} `{name}` defined more than once ({scope})"),
            ));
        }
    }
    sort(&mut findings);
    Ok(findings)
}

/// Runs rules L1–L5, L7 and L8 against a parsed spec. Findings are sorted by
/// (rule, subject, message).
pub fn lint(spec: &PipelineSpec, script_dir: &Path) -> Result<Vec<Finding>, LintError> {
    let instances = instantiate_tasks(spec, &spec.params)?;
    let mut by_task: BTreeMap<usize, Vec<&TaskInstance>> = BTreeMap::new();
    for inst in &instances {
        by_task.entry(inst.order_index).or_default().push(inst);
    }
    let root = paths::absolute(&spec.root);
    let task_script = |order: usize| -> Option<String> {
        let task = &spec.tasks[order];
        by_task
            .get(&order)
            .and_then(|insts| script_path(&insts[0].command, &root))
            .or_else(|| script_path(task.command.source(), &root))
    };
    let scripts: Vec<Option<String>> = (0..spec.tasks.len()).map(task_script).collect();

    let mut findings = Vec::new();

    // L1
    let mut users: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (task, script) in spec.tasks.iter().zip(&scripts) {
        if let Some(s) = script {
            users.entry(s.as_str()).or_default().push(&task.name);
        }
    }
    for (script, tasks) in users {
        if tasks.len() > 1 {
            findings.push(Finding::new(
                RuleId::L1,
                script,
                format!("script used by {} tasks: {}", tasks.len(), tasks.join(", ")),
            ));
        }
    }

    // L2
    for task in &spec.tasks {
        match task.kind {
            TaskKind::Aggregate => {
                if let Some(t) = task.targets.iter().find(|t| t.pattern.uses_name(RECORDING)) {
                    findings.push(Finding::new(
                        RuleId::L2,
                        &task.name,
                        format!("aggregate task writes per-recording target `{t}`"),
                    ));
                }
            }
            TaskKind::PerRecording => {
                let mentions = task.command.uses_name(RECORDING)
                    || task.targets.iter().any(|t| t.pattern.uses_name(RECORDING));
                if !mentions {
                    findings.push(Finding::new(
                        RuleId::L2,
                        &task.name,
                        "per-recording task is not parameterised by `{recording}`",
                    ));
                }
            }
        }
    }
    let mut producer: HashMap<&str, &TaskInstance> = HashMap::new();
    for inst in &instances {
        for t in &inst.targets {
            producer.entry(t.as_str()).or_insert(inst);
        }
    }
    let mut crossing: BTreeMap<usize, (String, String)> = BTreeMap::new();
    for inst in instances.iter().filter(|i| i.kind == TaskKind::PerRecording) {
        for d in &inst.deps {
            let Some(p) = producer.get(d.as_str()) else {
                continue;
            };
            if p.kind == TaskKind::PerRecording && p.recording != inst.recording {
                crossing
                    .entry(inst.order_index)
                    .or_insert_with(|| (inst.instance_id.clone(), p.instance_id.clone()));
            }
        }
    }
    for (order, (consumer, producer)) in crossing {
        findings.push(Finding::new(
            RuleId::L2,
            &spec.tasks[order].name,
            format!("`{consumer}` reads output of another recording's instance `{producer}`"),
        ));
    }

    // L3
    let consumed: BTreeSet<&str> = instances
        .iter()
        .flat_map(|i| i.deps.iter().map(String::as_str))
        .collect();
    for task in spec.tasks.iter().filter(|t| !t.is_final) {
        let insts = by_task.get(&task.order_index).map(Vec::as_slice).unwrap_or(&[]);
        for target in &task.targets {
            let expanded: Vec<String> = insts
                .iter()
                .flat_map(|inst| expand_for(target, inst, spec))
                .collect();
            if !expanded.is_empty() && !expanded.iter().any(|p| consumed.contains(p.as_str())) {
                findings.push(Finding::new(
                    RuleId::L3,
                    &task.name,
                    format!("target `{target}` is read by no task (mark the task `final = true` if intended)"),
                ));
            }
        }
    }

    // L4, L5
    for task in &spec.tasks {
        if task.targets.is_empty() {
            findings.push(Finding::new(
                RuleId::L4,
                &task.name,
                "task saves no results: declare at least one target",
            ));
        }
        if task.report_items.is_empty() && !task.no_report {
            findings.push(Finding::new(
                RuleId::L5,
                &task.name,
                "task visualises nothing: add report items or set `no_report = true`",
            ));
        }
    }

    // L7
    let files = classify::list_files(script_dir).map_err(|source| LintError::Io {
        path: script_dir.to_path_buf(),
        source,
    })?;
    let mut referenced = classify::referenced_files(spec, &instances);
    for manifest_name in ["pipeline.toml"] {
        referenced.insert(paths::absolute(&root.join(manifest_name)));
    }
    for class in classify::classify_with(files, &referenced) {
        if class.class == ScriptKind::Unclassified {
            findings.push(Finding::new(
                RuleId::L7,
                class.name,
                "not part of the pipeline: referenced by no task and not named `NN_*` or `figure_*`; candidate for cleanup",
            ));
        }
    }

    // L8
    let mut highest: Option<(u32, &str)> = None;
    for (task, script) in spec.tasks.iter().zip(&scripts) {
        let name = script
            .as_deref()
            .and_then(|s| Path::new(s).file_name())
            .map(|n| n.to_string_lossy().into_owned());
        let Some(ScriptKind::OfficialStep(n)) = name.as_deref().and_then(classify_name) else {
            continue;
        };
        match highest {
            Some((h, prev)) if n <= h => findings.push(Finding::new(
                RuleId::L8,
                &task.name,
                format!("step number {n:02} does not follow {h:02} (`{prev}`) in manifest order"),
            )),
            _ => highest = Some((n, &task.name)),
        }
    }

    sort(&mut findings);
    Ok(findings)
}

fn expand_for(
    target: &crate::manifest::FileRef,
    inst: &TaskInstance,
    spec: &PipelineSpec,
) -> Vec<String> {
    let mut lists = BTreeMap::new();
    for key in target.pattern.keys() {
        let values = match &key {
            crate::manifest::FieldKey::Name(n) if n == RECORDING => match &inst.recording {
                Some(r) => vec![r.to_string()],
                None => spec.recordings.iter().map(|r| r.to_string()).collect(),
            },
            crate::manifest::FieldKey::Name(n) => spec
                .params
                .get(n)
                .map(|v| v.to_text_list())
                .unwrap_or_default(),
            crate::manifest::FieldKey::Param(n) => spec
                .params
                .get(n)
                .map(|v| vec![v.to_text()])
                .unwrap_or_default(),
        };
        lists.insert(key.binding_key(), values);
    }
    target
        .pattern
        .enumerate(&lists)
        .unwrap_or_default()
        .into_iter()
        .map(|p| paths::normalize(&p))
        .collect()
}

fn sort(findings: &mut [Finding]) {
    findings.sort_by(|a, b| {
        (a.rule_id, &a.subject, &a.message).cmp(&(b.rule_id, &b.subject, &b.message))
    });
}
