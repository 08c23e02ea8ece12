//! The `pipeline.toml` manifest: recordings, parameters, filename templates and
//! the ordered list of tasks.
//!
//! Every parameter, template alias and task name has exactly one definition
//! site. Parsing comes in two flavours: [`parse_manifest`] rejects the first
//! problem it finds, [`parse_manifest_lenient`] keeps going past recoverable
//! problems (duplicates, missing targets, kind violations) so the linter can
//! report all of them at once.

mod instance;
mod params;
mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use instance::{instantiate_tasks, TaskInstance};
pub use params::{ParamValue, ParameterSet};
pub use template::{Field, FieldKey, Pattern, TemplateError};

pub(crate) use template::is_token;

/// Reserved placeholder bound to the recording identifier.
pub const RECORDING: &str = "recording";

/// Reserved report name for aggregate tasks; not usable as a recording id.
pub const AGGREGATE: &str = "aggregate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DefinitionKind {
    Parameter,
    Template,
    Task,
    Recording,
}

impl fmt::Display for DefinitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefinitionKind::Parameter => "parameter",
            DefinitionKind::Template => "template",
            DefinitionKind::Task => "task",
            DefinitionKind::Recording => "recording",
        })
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest syntax: {0}")]
    Syntax(String),
    #[error("{kind} `{name}` defined more than once ({scope})")]
    DuplicateDefinition {
        kind: DefinitionKind,
        name: String,
        scope: String,
    },
    #[error("task `{task}` references unknown {what} `{name}`")]
    UnknownReference {
        task: String,
        what: &'static str,
        name: String,
    },
    #[error("task `{task}` declares no targets")]
    MissingTargets { task: String },
    #[error("task `{task}`: {detail}")]
    KindViolation { task: String, detail: String },
    #[error("invalid {what} `{value}`: must match [A-Za-z0-9_-]+")]
    InvalidName { what: &'static str, value: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A recording identifier (one participant, one session...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct RecordingId(String);

impl RecordingId {
    pub fn new(value: &str) -> Result<Self, ManifestError> {
        if !is_token(value) || value == AGGREGATE {
            return Err(ManifestError::InvalidName {
                what: "recording id",
                value: value.to_string(),
            });
        }
        Ok(RecordingId(value.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RecordingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PerRecording,
    Aggregate,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::PerRecording => "per_recording",
            TaskKind::Aggregate => "aggregate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileTemplate {
    pub alias: String,
    pub pattern: Pattern,
}

/// A dep, target or report entry: either a registered alias or a literal pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRef {
    pub alias: Option<String>,
    pub pattern: Pattern,
}

impl fmt::Display for FileRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.alias {
            Some(a) => f.write_str(a),
            None => f.write_str(self.pattern.source()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub command: Pattern,
    pub deps: Vec<FileRef>,
    pub targets: Vec<FileRef>,
    pub report_items: Vec<FileRef>,
    pub no_report: bool,
    /// Targets are end products; nothing downstream is expected to read them.
    pub is_final: bool,
    pub param_refs: Vec<String>,
    pub order_index: usize,
}

impl TaskSpec {
    fn patterns(&self) -> impl Iterator<Item = &Pattern> {
        std::iter::once(&self.command).chain(
            self.deps
                .iter()
                .chain(&self.targets)
                .chain(&self.report_items)
                .map(|r| &r.pattern),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub name: String,
    /// Directory holding the manifest. Commands run here; relative paths resolve here.
    pub root: PathBuf,
    pub recordings: Vec<RecordingId>,
    pub params: ParameterSet,
    pub host_params: BTreeMap<String, ParameterSet>,
    pub templates: BTreeMap<String, FileTemplate>,
    pub tasks: Vec<TaskSpec>,
}

impl PipelineSpec {
    /// Base parameters overlaid with the scope whose name equals `hostname`
    /// exactly (case-sensitive). Without a matching scope the base is returned.
    pub fn resolve_params(&self, hostname: &str) -> ParameterSet {
        match self.host_params.get(hostname) {
            Some(host) => self.params.overlaid(host),
            None => self.params.clone(),
        }
    }

    pub fn template(&self, alias: &str) -> Result<&FileTemplate, TemplateError> {
        self.templates
            .get(alias)
            .ok_or_else(|| TemplateError::UnknownAlias(alias.to_string()))
    }

    pub fn expand_template(
        &self,
        alias: &str,
        bindings: &BTreeMap<String, String>,
    ) -> Result<String, TemplateError> {
        self.template(alias)?.pattern.expand(bindings)
    }

    pub fn enumerate_template(
        &self,
        alias: &str,
        lists: &BTreeMap<String, Vec<String>>,
    ) -> Result<Vec<String>, TemplateError> {
        self.template(alias)?.pattern.enumerate(lists)
    }

    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn recording(&self, id: &str) -> Option<&RecordingId> {
        self.recordings.iter().find(|r| r.as_str() == id)
    }
}

/// Parses and validates a manifest. Relative paths resolve against the current
/// directory; use [`load_manifest`] to anchor them at the manifest file.
pub fn parse_manifest(text: &str) -> Result<PipelineSpec, ManifestError> {
    let (spec, mut problems) = parse_manifest_lenient(text)?;
    if problems.is_empty() {
        Ok(spec)
    } else {
        Err(problems.swap_remove(0))
    }
}

pub fn load_manifest(path: &Path) -> Result<PipelineSpec, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut spec = parse_manifest(&text)?;
    spec.root = manifest_root(path);
    Ok(spec)
}

pub fn manifest_root(path: &Path) -> PathBuf {
    let abs = crate::paths::absolute(path);
    abs.parent().map(Path::to_path_buf).unwrap_or(abs)
}

/// Like [`parse_manifest`], but recoverable problems are returned next to a
/// best-effort spec instead of failing: later duplicates are dropped, tasks
/// without targets and tasks breaking the per-recording/aggregate split are
/// kept as written. Unrecoverable problems are still errors.
pub fn parse_manifest_lenient(
    text: &str,
) -> Result<(PipelineSpec, Vec<ManifestError>), ManifestError> {
    let (table, mut problems) = parse_toml_collecting_duplicates(text)?;
    let raw: RawManifest = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ManifestError::Syntax(e.message().to_string()))?;
    let spec = build(raw, &mut problems)?;
    Ok((spec, problems))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    pipeline: RawPipeline,
    #[serde(default)]
    params: toml::Table,
    #[serde(default)]
    host: BTreeMap<String, RawHost>,
    #[serde(default)]
    templates: toml::Table,
    #[serde(default)]
    task: Vec<RawTask>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipeline {
    name: String,
    #[serde(default)]
    recordings: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHost {
    #[serde(default)]
    params: toml::Table,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    name: String,
    kind: TaskKind,
    command: String,
    #[serde(default)]
    deps: Vec<String>,
    #[serde(default)]
    targets: Vec<String>,
    #[serde(default)]
    report: Vec<String>,
    #[serde(default)]
    no_report: bool,
    #[serde(default, rename = "final")]
    is_final: bool,
    #[serde(default)]
    params: Vec<String>,
}

fn build(raw: RawManifest, problems: &mut Vec<ManifestError>) -> Result<PipelineSpec, ManifestError> {
    let mut recordings: Vec<RecordingId> = Vec::new();
    for r in &raw.pipeline.recordings {
        let id = RecordingId::new(r)?;
        if recordings.contains(&id) {
            problems.push(ManifestError::DuplicateDefinition {
                kind: DefinitionKind::Recording,
                name: r.clone(),
                scope: "pipeline.recordings".into(),
            });
        } else {
            recordings.push(id);
        }
    }

    let params = param_set(&raw.params)?;
    let mut host_params = BTreeMap::new();
    for (host, scope) in &raw.host {
        host_params.insert(host.clone(), param_set(&scope.params)?);
    }

    let mut templates = BTreeMap::new();
    for (alias, value) in &raw.templates {
        if !is_token(alias) {
            return Err(ManifestError::InvalidName {
                what: "template alias",
                value: alias.clone(),
            });
        }
        let source = value.as_str().ok_or_else(|| {
            ManifestError::Syntax(format!("template `{alias}` must be a string"))
        })?;
        templates.insert(
            alias.clone(),
            FileTemplate {
                alias: alias.clone(),
                pattern: Pattern::parse(source)?,
            },
        );
    }

    let mut tasks: Vec<TaskSpec> = Vec::new();
    for raw_task in raw.task {
        if !is_token(&raw_task.name) {
            return Err(ManifestError::InvalidName {
                what: "task name",
                value: raw_task.name,
            });
        }
        if tasks.iter().any(|t| t.name == raw_task.name) {
            problems.push(ManifestError::DuplicateDefinition {
                kind: DefinitionKind::Task,
                name: raw_task.name,
                scope: "task".into(),
            });
            continue;
        }
        let order_index = tasks.len();
        let task = build_task(raw_task, order_index, &templates, &params)?;
        check_kind(&task, problems);
        if task.targets.is_empty() {
            problems.push(ManifestError::MissingTargets {
                task: task.name.clone(),
            });
        }
        tasks.push(task);
    }

    Ok(PipelineSpec {
        name: raw.pipeline.name,
        root: PathBuf::from("."),
        recordings,
        params,
        host_params,
        templates,
        tasks,
    })
}

fn param_set(table: &toml::Table) -> Result<ParameterSet, ManifestError> {
    let mut set = ParameterSet::new();
    for (name, value) in table {
        if !is_token(name) {
            return Err(ManifestError::InvalidName {
                what: "parameter name",
                value: name.clone(),
            });
        }
        let v = ParamValue::from_toml(value)
            .map_err(|e| ManifestError::Syntax(format!("parameter `{name}`: {e}")))?;
        set.insert(name.clone(), v);
    }
    Ok(set)
}

/// An entry that looks like a bare identifier is meant as an alias, so an
/// unregistered one is a dangling reference rather than a file name.
fn looks_like_alias(entry: &str) -> bool {
    let mut bytes = entry.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic() || b == b'_')
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

fn file_ref(
    task: &str,
    entry: &str,
    templates: &BTreeMap<String, FileTemplate>,
) -> Result<FileRef, ManifestError> {
    if let Some(t) = templates.get(entry) {
        return Ok(FileRef {
            alias: Some(entry.to_string()),
            pattern: t.pattern.clone(),
        });
    }
    if looks_like_alias(entry) {
        return Err(ManifestError::UnknownReference {
            task: task.to_string(),
            what: "template alias",
            name: entry.to_string(),
        });
    }
    Ok(FileRef {
        alias: None,
        pattern: Pattern::parse(entry)?,
    })
}

fn build_task(
    raw: RawTask,
    order_index: usize,
    templates: &BTreeMap<String, FileTemplate>,
    params: &ParameterSet,
) -> Result<TaskSpec, ManifestError> {
    let name = raw.name;
    let refs = |entries: &[String]| -> Result<Vec<FileRef>, ManifestError> {
        entries
            .iter()
            .map(|e| file_ref(&name, e, templates))
            .collect()
    };
    let task = TaskSpec {
        kind: raw.kind,
        command: Pattern::parse(&raw.command)?,
        deps: refs(&raw.deps)?,
        targets: refs(&raw.targets)?,
        report_items: refs(&raw.report)?,
        no_report: raw.no_report,
        is_final: raw.is_final,
        param_refs: raw.params,
        order_index,
        name: name.clone(),
    };
    for p in &task.param_refs {
        if !params.contains(p) {
            return Err(ManifestError::UnknownReference {
                task: name,
                what: "parameter",
                name: p.clone(),
            });
        }
    }
    for pattern in task.patterns() {
        for key in pattern.keys() {
            let param = match &key {
                FieldKey::Name(n) if n == RECORDING => continue,
                FieldKey::Name(n) | FieldKey::Param(n) => n,
            };
            if !params.contains(param) {
                return Err(ManifestError::UnknownReference {
                    task: name,
                    what: "parameter",
                    name: param.clone(),
                });
            }
        }
    }
    Ok(task)
}

fn check_kind(task: &TaskSpec, problems: &mut Vec<ManifestError>) {
    match task.kind {
        TaskKind::PerRecording => {
            let mentions = task.command.uses_name(RECORDING)
                || task.targets.iter().any(|t| t.pattern.uses_name(RECORDING));
            if !mentions {
                problems.push(ManifestError::KindViolation {
                    task: task.name.clone(),
                    detail: "per-recording task mentions `{recording}` in neither its command nor its targets".into(),
                });
            }
        }
        TaskKind::Aggregate => {
            if let Some(t) = task.targets.iter().find(|t| t.pattern.uses_name(RECORDING)) {
                problems.push(ManifestError::KindViolation {
                    task: task.name.clone(),
                    detail: format!("aggregate task has per-recording target `{t}`"),
                });
            }
        }
    }
}

/// One-line form of a TOML error: `line L, column C: message`.
fn syntax_error(err: &toml::de::Error, text: &str) -> ManifestError {
    let msg = err.message().trim();
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            ManifestError::Syntax(format!("line {line}, column {column}: {msg}"))
        }
        None => ManifestError::Syntax(msg.to_string()),
    }
}

/// Parses TOML, turning each duplicate key into a [`ManifestError::DuplicateDefinition`]
/// and dropping the later definition so parsing can continue.
fn parse_toml_collecting_duplicates(
    text: &str,
) -> Result<(toml::Table, Vec<ManifestError>), ManifestError> {
    let mut text = text.to_string();
    let mut problems = Vec::new();
    loop {
        let err = match text.parse::<toml::Table>() {
            Ok(table) => return Ok((table, problems)),
            Err(e) => e,
        };
        let syntax = || syntax_error(&err, &text);
        let span = match err.span() {
            Some(s) if err.message() == "duplicate key" => s,
            _ => return Err(syntax()),
        };
        let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
        if text[line_start..].trim_start().starts_with('[') {
            return Err(syntax());
        }
        let key = text[span.clone()].trim_matches(|c| c == '"' || c == '\'').to_string();
        let (kind, scope) = match enclosing_header(&text[..line_start]) {
            Some(h) if h == "params" => (DefinitionKind::Parameter, "base scope".to_string()),
            Some(h) if h == "templates" => (DefinitionKind::Template, "templates".to_string()),
            Some(h) if h.starts_with("host.") && h.ends_with(".params") => {
                let host = h["host.".len()..h.len() - ".params".len()].trim_matches('"');
                (DefinitionKind::Parameter, format!("host `{host}`"))
            }
            _ => return Err(syntax()),
        };
        let end = value_end(&text, span.end).ok_or_else(syntax)?;
        let blanked: String = text[line_start..end]
            .chars()
            .map(|c| if c == '\n' { '\n' } else { ' ' })
            .collect();
        text.replace_range(line_start..end, &blanked);
        problems.push(ManifestError::DuplicateDefinition {
            kind,
            name: key,
            scope,
        });
    }
}

fn enclosing_header(before: &str) -> Option<String> {
    before.lines().rev().find_map(|line| {
        let l = line.trim();
        let inner = l.strip_prefix('[')?;
        let inner = inner.split(']').next()?;
        Some(inner.trim_start_matches('[').trim().to_string())
    })
}

/// End offset of the `key = value` entry whose key ends at `from`: the first
/// newline outside strings and brackets, or end of text.
fn value_end(text: &str, from: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut i = from;
    let mut depth = 0i32;
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) => {
                if b == b'\\' && q == b'"' {
                    i += 1;
                } else if b == q {
                    quote = None;
                } else if b == b'\n' {
                    // multi-line strings are not handled
                    return None;
                }
            }
            None => match b {
                b'"' | b'\'' => quote = Some(b),
                b'[' | b'{' => depth += 1,
                b']' | b'}' => depth -= 1,
                b'#' => {
                    while i < bytes.len() && bytes[i] != b'\n' {
                        i += 1;
                    }
                    continue;
                }
                b'\n' if depth <= 0 => return Some(i),
                _ => {}
            },
        }
        i += 1;
    }
    Some(bytes.len())
}
