use std::collections::BTreeMap;

use serde::Serialize;

use super::{
    FieldKey, FileRef, ManifestError, ParameterSet, Pattern, PipelineSpec, RecordingId, TaskKind,
    TaskSpec, RECORDING,
};
use crate::paths;

/// One runnable unit: a task, bound to a recording for per-recording tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskInstance {
    /// `name` for aggregate tasks, `name:recording` otherwise.
    pub instance_id: String,
    pub task: String,
    pub kind: TaskKind,
    pub order_index: usize,
    pub recording: Option<RecordingId>,
    /// Position of `recording` in the pipeline's recording list.
    pub recording_index: Option<usize>,
    pub deps: Vec<String>,
    pub targets: Vec<String>,
    pub report_items: Vec<String>,
    pub command: String,
    pub param_refs: Vec<String>,
}

impl TaskInstance {
    /// Ordering key: manifest order first, then recording order.
    pub fn sort_key(&self) -> (usize, usize) {
        (self.order_index, self.recording_index.unwrap_or(0))
    }
}

/// Expands every task into concrete instances, ordered by task then recording.
///
/// Per-recording tasks bind `{recording}` to one recording each; aggregate
/// tasks bind it to the whole recording list, so their `{recording}` deps
/// expand to one path per recording. Any other `{name}` binds to parameter
/// `name`: list parameters enumerate in paths and join with spaces in commands.
pub fn instantiate_tasks(
    spec: &PipelineSpec,
    params: &ParameterSet,
) -> Result<Vec<TaskInstance>, ManifestError> {
    let mut out = Vec::new();
    for task in &spec.tasks {
        match task.kind {
            TaskKind::PerRecording => {
                for (i, rec) in spec.recordings.iter().enumerate() {
                    out.push(instantiate(task, params, &[rec.clone()], Some(i))?);
                }
            }
            TaskKind::Aggregate => {
                out.push(instantiate(task, params, &spec.recordings, None)?);
            }
        }
    }
    Ok(out)
}

fn instantiate(
    task: &TaskSpec,
    params: &ParameterSet,
    recordings: &[RecordingId],
    recording_index: Option<usize>,
) -> Result<TaskInstance, ManifestError> {
    let recording = recording_index.map(|_| recordings[0].clone());
    let unknown = |name: &str| ManifestError::UnknownReference {
        task: task.name.clone(),
        what: "parameter",
        name: name.to_string(),
    };

    let lists_for = |pattern: &Pattern| -> Result<BTreeMap<String, Vec<String>>, ManifestError> {
        let mut lists = BTreeMap::new();
        for key in pattern.keys() {
            let values = match &key {
                FieldKey::Name(n) if n == RECORDING => {
                    recordings.iter().map(|r| r.to_string()).collect()
                }
                FieldKey::Name(n) => params.get(n).ok_or_else(|| unknown(n))?.to_text_list(),
                FieldKey::Param(p) => vec![params.get(p).ok_or_else(|| unknown(p))?.to_text()],
            };
            lists.insert(key.binding_key(), values);
        }
        Ok(lists)
    };

    let expand_files = |refs: &[FileRef]| -> Result<Vec<String>, ManifestError> {
        let mut paths_out: Vec<String> = Vec::new();
        for r in refs {
            for p in r.pattern.enumerate(&lists_for(&r.pattern)?)? {
                let p = paths::normalize(&p);
                if !paths_out.contains(&p) {
                    paths_out.push(p);
                }
            }
        }
        Ok(paths_out)
    };

    let joined_recordings = recordings
        .iter()
        .map(|r| r.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let mut scalars: BTreeMap<String, String> = BTreeMap::new();
    for key in task.command.keys() {
        let value = match &key {
            FieldKey::Name(n) if n == RECORDING => joined_recordings.clone(),
            FieldKey::Name(n) | FieldKey::Param(n) => {
                params.get(n).ok_or_else(|| unknown(n))?.to_text()
            }
        };
        scalars.insert(key.binding_key(), value);
    }
    let command = task.command.expand(&scalars)?;

    let instance_id = match &recording {
        Some(r) => format!("{}:{}", task.name, r),
        None => task.name.clone(),
    };
    Ok(TaskInstance {
        instance_id,
        task: task.name.clone(),
        kind: task.kind,
        order_index: task.order_index,
        recording,
        recording_index,
        deps: expand_files(&task.deps)?,
        targets: expand_files(&task.targets)?,
        report_items: expand_files(&task.report_items)?,
        command,
        param_refs: task.param_refs.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::parse_manifest;
    use super::*;

    fn spec(text: &str) -> PipelineSpec {
        parse_manifest(text).unwrap()
    }

    #[test]
    fn one_instance_per_recording() {
        let s = spec(
            r#"
[pipeline]
name = "p"
recordings = ["s1", "s2"]
[[task]]
name = "t"
kind = "per_recording"
command = "run {recording}"
targets = ["out/{recording}.dat"]
"#,
        );
        let inst = instantiate_tasks(&s, &s.params).unwrap();
        let ids: Vec<_> = inst.iter().map(|i| i.instance_id.as_str()).collect();
        assert_eq!(ids, ["t:s1", "t:s2"]);
        assert_eq!(inst[1].command, "run s2");
        assert_eq!(inst[1].targets, ["out/s2.dat"]);
    }

    #[test]
    fn aggregate_deps_expand_over_recordings() {
        let s = spec(
            r#"
[pipeline]
name = "p"
recordings = ["s1", "s2"]
[templates]
filtered = "out/{recording}.dat"
[[task]]
name = "grand"
kind = "aggregate"
command = "avg {recording}"
deps = ["filtered"]
targets = ["out/grand.dat"]
"#,
        );
        let inst = instantiate_tasks(&s, &s.params).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].instance_id, "grand");
        assert_eq!(inst[0].deps, ["out/s1.dat", "out/s2.dat"]);
        assert_eq!(inst[0].command, "avg s1 s2");
        assert!(inst[0].recording.is_none());
    }

    #[test]
    fn params_substitute_and_enumerate() {
        let s = spec(
            r#"
[pipeline]
name = "p"
recordings = ["s1"]
[params]
hp = 0.5
condition = ["faces", "scrambled"]
[[task]]
name = "epochs"
kind = "per_recording"
command = "epo {recording} --hp {param:hp} --cond {condition}"
targets = ["out/{recording}/./{condition}-epo.fif"]
params = ["hp"]
"#,
        );
        let inst = instantiate_tasks(&s, &s.params).unwrap();
        assert_eq!(inst[0].command, "epo s1 --hp 0.5 --cond faces scrambled");
        assert_eq!(
            inst[0].targets,
            ["out/s1/faces-epo.fif", "out/s1/scrambled-epo.fif"]
        );
    }

    #[test]
    fn output_ordered_by_task_then_recording() {
        let s = spec(
            r#"
[pipeline]
name = "p"
recordings = ["b", "a"]
[[task]]
name = "one"
kind = "per_recording"
command = "x {recording}"
targets = ["1/{recording}"]
[[task]]
name = "agg"
kind = "aggregate"
command = "y"
targets = ["agg.dat"]
[[task]]
name = "two"
kind = "per_recording"
command = "x {recording}"
targets = ["2/{recording}"]
"#,
        );
        let ids: Vec<_> = instantiate_tasks(&s, &s.params)
            .unwrap()
            .into_iter()
            .map(|i| i.instance_id)
            .collect();
        assert_eq!(ids, ["one:b", "one:a", "agg", "two:b", "two:a"]);
    }
}
