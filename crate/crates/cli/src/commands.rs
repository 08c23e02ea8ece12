use std::collections::BTreeSet;
use std::fs::{File, OpenOptions, TryLockError};
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::Utc;
use serde_json::json;
use thiserror::Error;

use stepline_core::conformance::{self, Finding, LintError};
use stepline_core::engine::{self, describe_failure, EngineError, RunContext, StateStore, STATE_DIR};
use stepline_core::report::{self, ReportError, ReportScope};
use stepline_core::{
    instantiate_tasks, load_manifest, DependencyGraph, GraphError, ManifestError, ParamValue,
    ParameterSet, PipelineSpec, TaskInstance, TaskKind,
};

use crate::{Cli, Command, Format, Selection};

const HOSTNAME_ENV: &str = "STEPLINE_HOSTNAME";
const LOCK_FILE: &str = "lock";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing report {0}")]
    Report(#[from] ReportError),
    #[error(transparent)]
    Lint(#[from] LintError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("another stepline invocation holds {}", .0.display())]
    Locked(PathBuf),
}

impl CliError {
    /// 2 for configuration problems, 1 for runtime ones.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Manifest(_) | CliError::Graph(_) | CliError::Usage(_) | CliError::Locked(_) => 2,
            CliError::Engine(EngineError::CorruptState { .. }) => 2,
            CliError::Engine(_) | CliError::Report(_) | CliError::Io { .. } => 1,
            CliError::Lint(LintError::Manifest(_)) => 2,
            CliError::Lint(LintError::Io { .. }) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Pipeline {
    spec: PipelineSpec,
    params: ParameterSet,
    instances: Vec<TaskInstance>,
    graph: DependencyGraph,
}

impl Pipeline {
    fn load(manifest: &Path) -> Result<Self, CliError> {
        let spec = load_manifest(manifest)?;
        let host = hostname();
        let params = spec.resolve_params(&host);
        log::debug!("host `{host}`, {} parameters", params.len());
        let instances = instantiate_tasks(&spec, &params)?;
        let graph = DependencyGraph::build(&instances)?;
        Ok(Pipeline {
            spec,
            params,
            instances,
            graph,
        })
    }

    fn root(&self) -> &Path {
        &self.spec.root
    }

    fn ctx(&self) -> RunContext<'_> {
        RunContext {
            root: &self.spec.root,
            params: &self.params,
        }
    }

    /// `--task` and `--recording` intersect; an empty side selects everything.
    /// Aggregate instances belong to no recording, so `--recording` leaves
    /// them out.
    fn select(&self, sel: &Selection) -> Result<Option<BTreeSet<String>>, CliError> {
        if sel.tasks.is_empty() && sel.recordings.is_empty() {
            return Ok(None);
        }
        for t in &sel.tasks {
            if self.spec.task(t).is_none() {
                return Err(CliError::Usage(format!("unknown task `{t}`")));
            }
        }
        for r in &sel.recordings {
            if self.spec.recording(r).is_none() {
                return Err(CliError::Usage(format!("unknown recording `{r}`")));
            }
        }
        let chosen: BTreeSet<String> = self
            .instances
            .iter()
            .filter(|i| sel.tasks.is_empty() || sel.tasks.contains(&i.task))
            .filter(|i| {
                sel.recordings.is_empty()
                    || i.recording
                        .as_ref()
                        .is_some_and(|r| sel.recordings.iter().any(|s| s == r.as_str()))
            })
            .map(|i| i.instance_id.clone())
            .collect();
        if chosen.is_empty() {
            log::warn!("selection matches no instance");
        }
        Ok(Some(chosen))
    }

    fn state(&self) -> Result<StateStore, CliError> {
        Ok(StateStore::load(StateStore::default_path(self.root()))?)
    }

    fn jobs(&self, flag: Option<NonZeroUsize>) -> NonZeroUsize {
        flag.or_else(|| match self.params.get("n_jobs") {
            Some(ParamValue::Int(n)) => usize::try_from(*n).ok().and_then(NonZeroUsize::new),
            _ => None,
        })
        .unwrap_or(NonZeroUsize::MIN)
    }

    fn report_dir(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.root().join("reports"))
    }
}

fn hostname() -> String {
    std::env::var(HOSTNAME_ENV)
        .ok()
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| gethostname::gethostname().to_string_lossy().into_owned())
}

/// Advisory lock on `.stepline/lock`, released when the file is dropped.
fn lock(root: &Path) -> Result<File, CliError> {
    let dir = root.join(STATE_DIR);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(LOCK_FILE);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(io_err(&path))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(TryLockError::WouldBlock) => Err(CliError::Locked(path)),
        Err(TryLockError::Error(e)) => Err(io_err(&path)(e)),
    }
}

fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(io_err(Path::new("<stdout>")))
}

fn json_line(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}

pub fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Run {
            selection,
            dry_run,
            format,
        } => run(&cli, selection, *dry_run, *format),
        Command::Status { selection, format } => status(&cli, selection, *format),
        Command::List {
            selection,
            instances,
        } => list(&cli, selection, *instances),
        Command::Graph { output, instances } => graph(&cli, output.as_deref(), *instances),
        Command::Report { recordings } => report(&cli, recordings),
        Command::Lint { script_dir, format } => lint(&cli, script_dir.as_deref(), *format),
        Command::Stats { script_dir, format } => stats(&cli, script_dir.as_deref(), *format),
        Command::Forget { selection } => forget(&cli, selection),
    }
}

fn run(cli: &Cli, selection: &Selection, dry_run: bool, format: Format) -> Result<ExitCode, CliError> {
    let p = Pipeline::load(&cli.manifest)?;
    let sel = p.select(selection)?;
    let _lock = if dry_run { None } else { Some(lock(p.root())?) };
    let mut state = p.state()?;
    let ctx = p.ctx();
    let plan = engine::plan(&p.graph, &p.instances, &state, &ctx, sel.as_ref())?;

    if dry_run {
        let mut out = String::new();
        for step in &plan.steps {
            let why = match &step.reason {
                engine::ScheduleReason::Status(s) => s.to_string(),
                engine::ScheduleReason::Upstream => "upstream".to_string(),
            };
            out.push_str(&format!("{}\t{}\n", step.instance_id, why));
        }
        out.push_str(&format!(
            "{} to run, {} up to date\n",
            plan.steps.len(),
            plan.skipped.len()
        ));
        emit(&out)?;
        return Ok(ExitCode::SUCCESS);
    }

    let summary = engine::execute(&plan, &p.graph, &p.instances, &ctx, &mut state, p.jobs(cli.jobs))?;

    // partial records help debugging, so reports are refreshed even after failures
    let scopes = report::affected_scopes(
        &p.instances,
        summary
            .executed
            .iter()
            .filter(|e| e.succeeded())
            .map(|e| e.instance_id.as_str()),
    );
    if !scopes.is_empty() {
        report::write_report_set(
            &p.spec.name,
            &p.instances,
            p.root(),
            &scopes,
            &p.report_dir(&cli.report_dir),
            Utc::now(),
        )?;
    }

    match format {
        Format::Json => emit(&json_line(&json!(summary)))?,
        Format::Text => {
            let mut out = String::new();
            for e in summary.executed.iter().filter(|e| !e.succeeded()) {
                let why = describe_failure(e.failure.as_ref().expect("failed step"), e.exit_code);
                out.push_str(&format!("failed\t{}\t{why}\n", e.instance_id));
            }
            for b in &summary.blocked {
                out.push_str(&format!("blocked\t{b}\n"));
            }
            let ok = summary.executed.len() - summary.failed.len();
            out.push_str(&format!(
                "{ok} executed, {} up to date, {} failed, {} blocked\n",
                summary.skipped,
                summary.failed.len(),
                summary.blocked.len()
            ));
            emit(&out)?;
        }
    }
    Ok(if summary.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn status(cli: &Cli, selection: &Selection, format: Format) -> Result<ExitCode, CliError> {
    let p = Pipeline::load(&cli.manifest)?;
    let sel = p.select(selection)?;
    let state = p.state()?;
    let ctx = p.ctx();
    let rows: Vec<(&str, engine::InstanceStatus)> = p
        .graph
        .topo_order()
        .into_iter()
        .filter(|id| sel.as_ref().is_none_or(|s| s.contains(*id)))
        .map(|id| {
            let inst = p
                .instances
                .iter()
                .find(|i| i.instance_id == id)
                .expect("graph nodes come from instances");
            (id, engine::status(inst, &p.graph, &state, &ctx))
        })
        .collect();
    match format {
        Format::Json => {
            let arr: Vec<_> = rows
                .iter()
                .map(|(id, st)| json!({"instance": id, "status": st.label(), "detail": st.to_string()}))
                .collect();
            emit(&json_line(&json!(arr)))?;
        }
        Format::Text => {
            let width = rows.iter().map(|(id, _)| id.len()).max().unwrap_or(0);
            let out: String = rows
                .iter()
                .map(|(id, st)| format!("{id:width$}  {st}\n"))
                .collect();
            emit(&out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn list(cli: &Cli, selection: &Selection, instances: bool) -> Result<ExitCode, CliError> {
    let p = Pipeline::load(&cli.manifest)?;
    let sel = p.select(selection)?;
    let chosen = |i: &&TaskInstance| sel.as_ref().is_none_or(|s| s.contains(&i.instance_id));
    let mut out = String::new();
    if instances {
        for i in p.instances.iter().filter(chosen) {
            out.push_str(&format!("{}\t{}\n", i.instance_id, i.command));
        }
    } else {
        for task in &p.spec.tasks {
            let n = p
                .instances
                .iter()
                .filter(chosen)
                .filter(|i| i.task == task.name)
                .count();
            if n == 0 && sel.is_some() {
                continue;
            }
            let kind = match task.kind {
                TaskKind::PerRecording => "per_recording",
                TaskKind::Aggregate => "aggregate",
            };
            out.push_str(&format!("{}\t{kind}\t{n}\n", task.name));
        }
    }
    emit(&out)?;
    Ok(ExitCode::SUCCESS)
}

fn graph(cli: &Cli, output: Option<&Path>, instances: bool) -> Result<ExitCode, CliError> {
    let p = Pipeline::load(&cli.manifest)?;
    let dot = if instances {
        p.graph.export_dot_instances(&p.spec)
    } else {
        p.graph.export_dot(&p.spec)
    };
    match output {
        Some(path) => std::fs::write(path, dot).map_err(io_err(path))?,
        None => emit(&dot)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn report(cli: &Cli, recordings: &[String]) -> Result<ExitCode, CliError> {
    let p = Pipeline::load(&cli.manifest)?;
    for r in recordings {
        if p.spec.recording(r).is_none() {
            return Err(CliError::Usage(format!("unknown recording `{r}`")));
        }
    }
    let _lock = lock(p.root())?;
    let mut scopes: Vec<ReportScope> = if recordings.is_empty() {
        p.spec
            .recordings
            .iter()
            .map(|r| ReportScope::Recording(r.to_string()))
            .collect()
    } else {
        recordings.iter().cloned().map(ReportScope::Recording).collect()
    };
    scopes.push(ReportScope::Aggregate);
    let written = report::write_report_set(
        &p.spec.name,
        &p.instances,
        p.root(),
        &scopes,
        &p.report_dir(&cli.report_dir),
        Utc::now(),
    )?;
    let out: String = written.iter().map(|w| format!("{}\n", w.display())).collect();
    emit(&out)?;
    Ok(ExitCode::SUCCESS)
}

fn lint(cli: &Cli, script_dir: Option<&Path>, format: Format) -> Result<ExitCode, CliError> {
    let text = std::fs::read_to_string(&cli.manifest).map_err(|source| {
        CliError::Manifest(ManifestError::Io {
            path: cli.manifest.clone(),
            source,
        })
    })?;
    let root = stepline_core::manifest::manifest_root(&cli.manifest);
    let script_dir = script_dir.map(Path::to_path_buf).unwrap_or_else(|| root.clone());
    let findings = conformance::lint_manifest_text(&text, &root, &script_dir)?;
    match format {
        Format::Json => emit(&json_line(&json!(findings)))?,
        Format::Text => emit(&findings.iter().map(|f: &Finding| format!("{f}\n")).collect::<String>())?,
    }
    Ok(if conformance::has_errors(&findings) {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn stats(cli: &Cli, script_dir: Option<&Path>, format: Format) -> Result<ExitCode, CliError> {
    let dir = match script_dir {
        Some(d) => d.to_path_buf(),
        None => stepline_core::manifest::manifest_root(&cli.manifest),
    };
    let files = conformance::official_scripts(&dir).map_err(io_err(&dir))?;
    let stats = conformance::summarize_scripts(&files, &conformance::default_comment_prefixes())
        .map_err(io_err(&dir))?;
    let name = |p: &Path| {
        p.strip_prefix(&dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    match format {
        Format::Json => {
            let files: Vec<_> = stats
                .per_file
                .iter()
                .map(|(p, c)| {
                    json!({"file": name(p), "code": c.code, "comment": c.comment, "blank": c.blank})
                })
                .collect();
            emit(&json_line(&json!({"files": files, "aggregate": stats.aggregate})))?;
        }
        Format::Text => {
            let mut out = String::from("file\tcode\tcomment\tblank\n");
            for (p, c) in &stats.per_file {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", name(p), c.code, c.comment, c.blank));
            }
            let a = &stats.aggregate;
            out.push_str(&format!(
                "{} step files: mean {:.1} code lines (std {:.1})\n",
                a.step_files, a.mean_code, a.std_code
            ));
            emit(&out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn forget(cli: &Cli, selection: &Selection) -> Result<ExitCode, CliError> {
    let p = Pipeline::load(&cli.manifest)?;
    let sel = p.select(selection)?;
    let _lock = lock(p.root())?;
    let mut state = p.state()?;
    let n = match &sel {
        None => {
            let n = state.len();
            state.forget_all()?;
            n
        }
        Some(ids) => ids.len() - state.forget(ids.iter().map(String::as_str))?.len(),
    };
    emit(&format!("{n} forgotten\n"))?;
    Ok(ExitCode::SUCCESS)
}
