//! Per-recording HTML reports: every figure a task declares, in manifest order.
//!
//! Figures are produced by the task scripts; reports only reference them.
//! Missing figures show up as placeholders so a half-run pipeline still
//! yields a readable record.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::manifest::{TaskInstance, TaskKind, AGGREGATE};
use crate::paths;

#[derive(Debug, Error)]
#[error("{}: {source}", path.display())]
pub struct ReportError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

/// Which report a set of items belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReportScope {
    Recording(String),
    Aggregate,
}

impl ReportScope {
    pub fn name(&self) -> &str {
        match self {
            ReportScope::Recording(r) => r,
            ReportScope::Aggregate => AGGREGATE,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.html", self.name())
    }

    /// Report an instance's figures go to.
    pub fn of(instance: &TaskInstance) -> Self {
        match (&instance.kind, &instance.recording) {
            (TaskKind::PerRecording, Some(r)) => ReportScope::Recording(r.to_string()),
            _ => ReportScope::Aggregate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportItem {
    pub task: String,
    pub order_index: usize,
    /// Manifest-relative figure path.
    pub path: String,
    pub exists: bool,
    pub produced_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportManifest {
    pub pipeline: String,
    pub scope: ReportScope,
    /// Sorted by (order_index, path).
    pub items: Vec<ReportItem>,
}

/// Collects the figures for one report, checking which exist right now.
pub fn collect_report_items(
    pipeline: &str,
    instances: &[TaskInstance],
    root: &Path,
    scope: &ReportScope,
) -> ReportManifest {
    let mut items: Vec<ReportItem> = instances
        .iter()
        .filter(|i| &ReportScope::of(i) == scope)
        .flat_map(|inst| {
            inst.report_items.iter().map(move |p| {
                let meta = std::fs::metadata(paths::resolve(root, p)).ok();
                ReportItem {
                    task: inst.task.clone(),
                    order_index: inst.order_index,
                    path: p.clone(),
                    exists: meta.as_ref().is_some_and(|m| m.is_file()),
                    produced_at: meta
                        .and_then(|m| m.modified().ok())
                        .map(DateTime::<Utc>::from),
                }
            })
        })
        .collect();
    items.sort_by(|a, b| (a.order_index, &a.path).cmp(&(b.order_index, &b.path)));
    items.dedup_by(|a, b| a.order_index == b.order_index && a.path == b.path);
    ReportManifest {
        pipeline: pipeline.to_string(),
        scope: scope.clone(),
        items,
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "gif", "svg", "webp", "bmp", "avif"];

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:auto;padding:1em}\
figure{margin:1em 0}img{max-width:100%}figcaption{color:#555;font-size:90%}\
.placeholder{border:2px dashed #c66;color:#933;padding:2em;text-align:center}\
.generated{color:#777}";

/// Renders a report. `link_base` is the manifest directory as seen from the
/// report's directory; figure links are `link_base/path`.
pub fn render_report(
    manifest: &ReportManifest,
    link_base: &str,
    generated_at: DateTime<Utc>,
) -> String {
    let title = format!("{} \u{2014} {}", manifest.pipeline, manifest.scope.name());
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    writeln!(out, "<title>{}</title>", escape(&title)).unwrap();
    writeln!(out, "<style>{STYLE}</style>\n</head>\n<body>").unwrap();
    writeln!(out, "<h1>{}</h1>", escape(&title)).unwrap();
    writeln!(
        out,
        "<p class=\"generated\">Recording: <code>{}</code>. Generated {}.</p>",
        escape(manifest.scope.name()),
        generated_at.to_rfc3339_opts(SecondsFormat::Secs, true)
    )
    .unwrap();

    let mut current: Option<usize> = None;
    for item in &manifest.items {
        if current != Some(item.order_index) {
            if current.is_some() {
                out.push_str("</section>\n");
            }
            writeln!(
                out,
                "<section id=\"task-{}\">\n<h2>{}</h2>",
                escape(&item.task),
                escape(&item.task)
            )
            .unwrap();
            current = Some(item.order_index);
        }
        let href = link(link_base, &item.path);
        if !item.exists {
            writeln!(
                out,
                "<div class=\"placeholder\">not yet produced: <code>{}</code></div>",
                escape(&item.path)
            )
            .unwrap();
        } else if is_image(&item.path) {
            writeln!(
                out,
                "<figure><img src=\"{}\" alt=\"{}\"><figcaption>{}</figcaption></figure>",
                escape(&href),
                escape(&item.path),
                escape(&item.path)
            )
            .unwrap();
        } else {
            writeln!(
                out,
                "<p><a href=\"{}\">{}</a></p>",
                escape(&href),
                escape(&item.path)
            )
            .unwrap();
        }
    }
    if current.is_some() {
        out.push_str("</section>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

fn is_image(path: &str) -> bool {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn link(base: &str, path: &str) -> String {
    if Path::new(path).is_absolute() || base.is_empty() || base == "." {
        path.to_string()
    } else {
        paths::normalize(&format!("{base}/{path}"))
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Relative path from `out_dir` back to `root`, `/`-separated.
pub fn link_base(root: &Path, out_dir: &Path) -> String {
    let root = paths::absolute(root);
    let out_dir = paths::absolute(out_dir);
    pathdiff::diff_paths(&root, &out_dir)
        .map(|p| paths::to_slash(&p))
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| ".".to_string())
}

/// Writes one report per scope to `out_dir/<scope>.html`, replacing the whole
/// file each time. Returns the written paths in `scopes` order.
pub fn write_report_set(
    pipeline: &str,
    instances: &[TaskInstance],
    root: &Path,
    scopes: &[ReportScope],
    out_dir: &Path,
    generated_at: DateTime<Utc>,
) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let base = link_base(root, out_dir);
    let mut written = Vec::with_capacity(scopes.len());
    for scope in scopes {
        let manifest = collect_report_items(pipeline, instances, root, scope);
        let html = render_report(&manifest, &base, generated_at);
        let path = out_dir.join(scope.file_name());
        write_atomic(&path, html.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// All per-recording reports for `recordings`, plus `aggregate.html`.
pub fn write_reports(
    pipeline: &str,
    instances: &[TaskInstance],
    root: &Path,
    recordings: &[String],
    out_dir: &Path,
    generated_at: DateTime<Utc>,
) -> Result<Vec<PathBuf>, ReportError> {
    let mut scopes: Vec<ReportScope> = recordings
        .iter()
        .map(|r| ReportScope::Recording(r.clone()))
        .collect();
    scopes.push(ReportScope::Aggregate);
    write_report_set(pipeline, instances, root, &scopes, out_dir, generated_at)
}

/// Reports touched by a set of executed instances.
pub fn affected_scopes<'a, I>(instances: &[TaskInstance], executed: I) -> Vec<ReportScope>
where
    I: IntoIterator<Item = &'a str>,
{
    let executed: BTreeSet<&str> = executed.into_iter().collect();
    let scopes: BTreeSet<ReportScope> = instances
        .iter()
        .filter(|i| executed.contains(i.instance_id.as_str()))
        .map(ReportScope::of)
        .collect();
    scopes.into_iter().collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let err = |source| ReportError {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}
