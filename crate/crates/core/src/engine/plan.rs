use std::collections::{BTreeSet, HashMap};

use super::state::StateStore;
use super::status::{status, InstanceStatus};
use super::{EngineError, RunContext};
use crate::depgraph::DependencyGraph;
use crate::manifest::TaskInstance;

/// What happens to the rest of the plan when a step fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    /// Descendants of a failed step are not run; independent branches continue.
    #[default]
    BlockDescendants,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleReason {
    /// The instance itself is not up to date.
    Status(InstanceStatus),
    /// An ancestor within the selection is scheduled.
    Upstream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedStep {
    pub instance_id: String,
    pub command: String,
    pub reason: ScheduleReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecutionPlan {
    /// In topological order.
    pub steps: Vec<PlannedStep>,
    /// Selected instances that are up to date.
    pub skipped: Vec<String>,
    pub on_failure: FailurePolicy,
}

impl ExecutionPlan {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.instance_id.as_str()).collect()
    }
}

/// Scheduling rule on its own: walking in topological order, a selected node
/// is scheduled iff a selected parent is scheduled or `needs_run` says so.
/// `needs_run` is only consulted for selected nodes with no scheduled parent.
/// Returns node indices in topological order.
pub fn schedule<F>(
    graph: &DependencyGraph,
    selection: Option<&BTreeSet<String>>,
    mut needs_run: F,
) -> Result<Vec<usize>, EngineError>
where
    F: FnMut(usize) -> bool,
{
    let mut selected = vec![selection.is_none(); graph.len()];
    if let Some(sel) = selection {
        for id in sel {
            let i = graph
                .index_of(id)
                .ok_or_else(|| EngineError::UnknownInstance(id.clone()))?;
            selected[i] = true;
        }
    }
    let mut scheduled = vec![false; graph.len()];
    let mut out = Vec::new();
    for i in graph.topo_indices() {
        if !selected[i] {
            continue;
        }
        let upstream = graph.parents_of(i).iter().any(|&p| scheduled[p]);
        if upstream || needs_run(i) {
            scheduled[i] = true;
            out.push(i);
        }
    }
    Ok(out)
}

/// Plans a run over `selection` (all instances when `None`).
pub fn plan(
    graph: &DependencyGraph,
    instances: &[TaskInstance],
    state: &StateStore,
    ctx: &RunContext,
    selection: Option<&BTreeSet<String>>,
) -> Result<ExecutionPlan, EngineError> {
    let by_id: HashMap<&str, &TaskInstance> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), i))
        .collect();
    let inst_at = |i: usize| -> Result<&TaskInstance, EngineError> {
        let id = &graph.nodes()[i].id;
        by_id
            .get(id.as_str())
            .copied()
            .ok_or_else(|| EngineError::UnknownInstance(id.clone()))
    };
    // make sure every node has an instance before scheduling
    for i in 0..graph.len() {
        inst_at(i)?;
    }

    let mut statuses: HashMap<usize, InstanceStatus> = HashMap::new();
    let order = schedule(graph, selection, |i| {
        let st = status(inst_at(i).expect("checked above"), graph, state, ctx);
        let run = !st.is_up_to_date();
        statuses.insert(i, st);
        run
    })?;

    let scheduled: BTreeSet<usize> = order.iter().copied().collect();
    let steps = order
        .iter()
        .map(|&i| {
            let inst = inst_at(i).expect("checked above");
            PlannedStep {
                instance_id: inst.instance_id.clone(),
                command: inst.command.clone(),
                reason: match statuses.remove(&i) {
                    Some(st) => ScheduleReason::Status(st),
                    None => ScheduleReason::Upstream,
                },
            }
        })
        .collect();
    let skipped = graph
        .topo_indices()
        .into_iter()
        .filter(|i| statuses.contains_key(i) && !scheduled.contains(i))
        .map(|i| graph.nodes()[i].id.clone())
        .collect();
    Ok(ExecutionPlan {
        steps,
        skipped,
        on_failure: FailurePolicy::BlockDescendants,
    })
}
