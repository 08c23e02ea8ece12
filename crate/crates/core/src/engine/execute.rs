use std::collections::{BTreeSet, HashMap};
use std::num::NonZeroUsize;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use chrono::Utc;
use serde::Serialize;

use super::fingerprint::{fingerprint, Fingerprint};
use super::plan::ExecutionPlan;
use super::state::{StateRecord, StateStore};
use super::{EngineError, RunContext};
use crate::depgraph::DependencyGraph;
use crate::manifest::TaskInstance;
use crate::paths;

/// Environment variable carrying the recording id of per-recording instances.
pub const RECORDING_ENV: &str = "STEPLINE_RECORDING";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum StepFailure {
    /// The command ran and exited unsuccessfully.
    ExitStatus,
    /// The command could not be started.
    Spawn(String),
    /// A dep could not be read before starting.
    Input(String),
    /// The command succeeded but left a declared target missing.
    TargetNotProduced(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutedStep {
    pub instance_id: String,
    /// `None` when the process never started or was killed by a signal.
    pub exit_code: Option<i32>,
    pub wall_time: f64,
    /// Seconds since the start of the run.
    pub started: f64,
    pub finished: f64,
    pub failure: Option<StepFailure>,
}

impl ExecutedStep {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunSummary {
    /// Sorted by instance id.
    pub executed: Vec<ExecutedStep>,
    pub skipped: usize,
    pub failed: Vec<String>,
    pub blocked: Vec<String>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.failed.is_empty() && self.blocked.is_empty()
    }

    pub fn executed_ids(&self) -> BTreeSet<&str> {
        self.executed.iter().map(|e| e.instance_id.as_str()).collect()
    }
}

struct Finished {
    step: usize,
    exit: Result<Option<i32>, String>,
    started: f64,
    finished: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StepState {
    Waiting,
    Running,
    Done,
    Failed,
    Blocked,
}

/// Runs the plan with at most `jobs` commands at once.
///
/// A step starts once every parent that is part of the plan has succeeded.
/// Before a step starts its record is dropped from `state`; after it succeeds
/// and all of its targets exist, the new fingerprint is recorded. `state` is
/// persisted after each of these changes, so an interrupted run never leaves
/// a half-finished step looking up to date. When a step fails its plan
/// descendants are blocked; everything else keeps going.
pub fn execute(
    plan: &ExecutionPlan,
    graph: &DependencyGraph,
    instances: &[TaskInstance],
    ctx: &RunContext,
    state: &mut StateStore,
    jobs: NonZeroUsize,
) -> Result<RunSummary, EngineError> {
    let by_id: HashMap<&str, &TaskInstance> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), i))
        .collect();
    let steps: Vec<&TaskInstance> = plan
        .steps
        .iter()
        .map(|s| {
            by_id
                .get(s.instance_id.as_str())
                .copied()
                .ok_or_else(|| EngineError::UnknownInstance(s.instance_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let step_of_node: HashMap<usize, usize> = plan
        .steps
        .iter()
        .enumerate()
        .map(|(s, p)| {
            graph
                .index_of(&p.instance_id)
                .map(|n| (n, s))
                .ok_or_else(|| EngineError::UnknownInstance(p.instance_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let node_of_step: Vec<usize> = plan
        .steps
        .iter()
        .map(|p| graph.index_of(&p.instance_id).expect("checked above"))
        .collect();
    let plan_parents: Vec<Vec<usize>> = node_of_step
        .iter()
        .map(|&n| {
            graph
                .parents_of(n)
                .iter()
                .filter_map(|p| step_of_node.get(p).copied())
                .collect()
        })
        .collect();
    let plan_descendants = |s: usize| -> Vec<usize> {
        graph
            .descendant_indices(&[node_of_step[s]])
            .into_iter()
            .filter_map(|n| step_of_node.get(&n).copied())
            .collect()
    };

    let t0 = Instant::now();
    let mut phase = vec![StepState::Waiting; steps.len()];
    let mut fingerprints: HashMap<usize, Fingerprint> = HashMap::new();
    let mut executed: Vec<ExecutedStep> = Vec::new();
    let mut running = 0usize;
    let (tx, rx) = mpsc::channel::<Finished>();

    let fail = |s: usize, phase: &mut Vec<StepState>| {
        phase[s] = StepState::Failed;
        for d in plan_descendants(s) {
            if phase[d] == StepState::Waiting {
                phase[d] = StepState::Blocked;
            }
        }
    };

    loop {
        // start whatever is ready, in plan order
        for s in 0..steps.len() {
            if running >= jobs.get() {
                break;
            }
            if phase[s] != StepState::Waiting
                || !plan_parents[s].iter().all(|&p| phase[p] == StepState::Done)
            {
                continue;
            }
            let inst = steps[s];
            let now = t0.elapsed().as_secs_f64();
            let fp = match fingerprint(inst, ctx) {
                Ok(fp) => fp,
                Err(e) => {
                    log::error!("{}: {e}", inst.instance_id);
                    executed.push(ExecutedStep {
                        instance_id: inst.instance_id.clone(),
                        exit_code: None,
                        wall_time: 0.0,
                        started: now,
                        finished: now,
                        failure: Some(StepFailure::Input(e.to_string())),
                    });
                    fail(s, &mut phase);
                    continue;
                }
            };
            if state.remove(&inst.instance_id).is_some() {
                state.save()?;
            }
            fingerprints.insert(s, fp);
            phase[s] = StepState::Running;
            running += 1;
            log::info!("run {}: {}", inst.instance_id, inst.command);
            spawn_step(s, inst, ctx, t0, tx.clone());
        }

        if running == 0 {
            break;
        }
        let done = rx.recv().expect("worker threads hold a sender");
        running -= 1;
        let inst = steps[done.step];
        let mut step = ExecutedStep {
            instance_id: inst.instance_id.clone(),
            exit_code: None,
            wall_time: done.finished - done.started,
            started: done.started,
            finished: done.finished,
            failure: None,
        };
        match done.exit {
            Err(msg) => step.failure = Some(StepFailure::Spawn(msg)),
            Ok(code) => {
                step.exit_code = code;
                if code != Some(0) {
                    step.failure = Some(StepFailure::ExitStatus);
                } else if let Some(t) = inst
                    .targets
                    .iter()
                    .find(|t| !paths::resolve(ctx.root, t).exists())
                {
                    step.failure = Some(StepFailure::TargetNotProduced(t.clone()));
                }
            }
        }
        if step.succeeded() {
            phase[done.step] = StepState::Done;
            let fp = fingerprints.remove(&done.step).expect("fingerprinted at start");
            state.insert(
                inst.instance_id.clone(),
                StateRecord::new(fp, inst.targets.clone(), Utc::now()),
            );
            state.save()?;
        } else {
            log::error!(
                "{} failed: {}",
                inst.instance_id,
                describe_failure(step.failure.as_ref().expect("failed step"), step.exit_code)
            );
            fail(done.step, &mut phase);
        }
        executed.push(step);
    }

    executed.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let mut failed: Vec<String> = executed
        .iter()
        .filter(|e| !e.succeeded())
        .map(|e| e.instance_id.clone())
        .collect();
    failed.sort();
    let mut blocked: Vec<String> = (0..steps.len())
        .filter(|&s| phase[s] == StepState::Blocked)
        .map(|s| steps[s].instance_id.clone())
        .collect();
    blocked.sort();
    Ok(RunSummary {
        executed,
        skipped: plan.skipped.len(),
        failed,
        blocked,
    })
}

pub fn describe_failure(f: &StepFailure, exit_code: Option<i32>) -> String {
    match f {
        StepFailure::ExitStatus => match exit_code {
            Some(c) => format!("exit code {c}"),
            None => "terminated by signal".to_string(),
        },
        StepFailure::Spawn(m) => format!("could not start command: {m}"),
        StepFailure::Input(m) => m.clone(),
        StepFailure::TargetNotProduced(t) => format!("target not produced: {t}"),
    }
}

fn shell(command: &str) -> Command {
    #[cfg(unix)]
    {
        let mut c = Command::new("sh");
        c.arg("-c").arg(command);
        c
    }
    #[cfg(not(unix))]
    {
        let mut c = Command::new("cmd");
        c.arg("/C").arg(command);
        c
    }
}

fn spawn_step(
    step: usize,
    inst: &TaskInstance,
    ctx: &RunContext,
    t0: Instant,
    tx: mpsc::Sender<Finished>,
) {
    let mut cmd = shell(&inst.command);
    cmd.current_dir(ctx.root)
        .stdin(Stdio::null())
        // child stdout goes to our stderr so that our stdout stays machine-readable
        .stdout(Stdio::from(std::io::stderr()))
        .stderr(Stdio::inherit());
    if let Some(r) = &inst.recording {
        cmd.env(RECORDING_ENV, r.as_str());
    }
    thread::spawn(move || {
        let started = t0.elapsed().as_secs_f64();
        let exit = cmd
            .status()
            .map(|s| s.code())
            .map_err(|e| e.to_string());
        let finished = t0.elapsed().as_secs_f64();
        let _ = tx.send(Finished {
            step,
            exit,
            started,
            finished,
        });
    });
}
