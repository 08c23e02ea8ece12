use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use crate::engine::script_path;
use crate::manifest::{instantiate_tasks, PipelineSpec, TaskInstance};
use crate::paths;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "class", content = "step", rename_all = "snake_case")]
pub enum ScriptKind {
    /// `NN_...`: a numbered analysis step.
    OfficialStep(u32),
    /// `figure_...`: produces a publication figure.
    OfficialFigure,
    /// Referenced by the manifest without an official prefix.
    Support,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScriptClass {
    pub path: PathBuf,
    /// File name relative to the scanned directory.
    pub name: String,
    pub class: ScriptKind,
}

fn step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d\d)_.+").unwrap())
}

fn figure_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^figure_.+").unwrap())
}

/// Classifies a file name by prefix alone.
pub fn classify_name(name: &str) -> Option<ScriptKind> {
    if let Some(c) = step_re().captures(name) {
        return Some(ScriptKind::OfficialStep(c[1].parse().expect("two digits")));
    }
    figure_re().is_match(name).then_some(ScriptKind::OfficialFigure)
}

/// Absolute paths of every file the manifest mentions: task scripts, deps,
/// targets and report items.
pub(crate) fn referenced_files(spec: &PipelineSpec, instances: &[TaskInstance]) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let root = paths::absolute(&spec.root);
    for inst in instances {
        if let Some(s) = script_path(&inst.command, &root) {
            out.insert(paths::absolute(&root.join(s)));
        }
        for p in inst.deps.iter().chain(&inst.targets).chain(&inst.report_items) {
            out.insert(paths::absolute(&paths::resolve(&root, p)));
        }
    }
    for task in &spec.tasks {
        if let Some(s) = script_path(task.command.source(), &root) {
            out.insert(paths::absolute(&root.join(s)));
        }
    }
    out
}

/// Regular, non-hidden files directly inside `dir`, sorted by name.
pub(crate) fn list_files(dir: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !entry.file_type()?.is_file() {
            continue;
        }
        out.push((name, entry.path()));
    }
    out.sort();
    Ok(out)
}

pub(crate) fn classify_with(
    files: Vec<(String, PathBuf)>,
    referenced: &BTreeSet<PathBuf>,
) -> Vec<ScriptClass> {
    files
        .into_iter()
        .map(|(name, path)| {
            let class = classify_name(&name).unwrap_or_else(|| {
                if referenced.contains(&paths::absolute(&path)) {
                    ScriptKind::Support
                } else {
                    ScriptKind::Unclassified
                }
            });
            ScriptClass { path, name, class }
        })
        .collect()
}

/// Classifies every regular file directly inside `script_dir`.
pub fn classify_scripts(script_dir: &Path, spec: &PipelineSpec) -> io::Result<Vec<ScriptClass>> {
    let instances = instantiate_tasks(spec, &spec.params).unwrap_or_default();
    let referenced = referenced_files(spec, &instances);
    Ok(classify_with(list_files(script_dir)?, &referenced))
}

/// Numbered step and `figure_` files directly inside `dir`, sorted by name.
pub fn official_scripts(dir: &Path) -> io::Result<Vec<PathBuf>> {
    Ok(list_files(dir)?
        .into_iter()
        .filter(|(name, _)| classify_name(name).is_some())
        .map(|(_, path)| path)
        .collect())
}
