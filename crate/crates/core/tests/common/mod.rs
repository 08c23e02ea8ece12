#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use chrono::Utc;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

use stepline_core::conformance::LineCounts;
use stepline_core::engine::{fingerprint, RunContext, StateRecord, StateStore};
use stepline_core::{
    instantiate_tasks, load_manifest, parse_manifest, DependencyGraph, PipelineSpec, TaskInstance,
};

/// Fixture directory; resolves from any crate in the workspace.
pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}

/// A scratch copy of a fixture directory.
pub fn copy_fixture(name: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture(name), dir.path());
    dir
}

pub struct Loaded {
    pub spec: PipelineSpec,
    pub instances: Vec<TaskInstance>,
    pub graph: DependencyGraph,
}

pub fn load(dir: &Path) -> Loaded {
    let spec = load_manifest(&dir.join("pipeline.toml")).unwrap();
    let instances = instantiate_tasks(&spec, &spec.params).unwrap();
    let graph = DependencyGraph::build(&instances).unwrap();
    Loaded {
        spec,
        instances,
        graph,
    }
}

pub fn load_text(text: &str, root: &Path) -> Loaded {
    let mut spec = parse_manifest(text).unwrap();
    spec.root = root.to_path_buf();
    let instances = instantiate_tasks(&spec, &spec.params).unwrap();
    let graph = DependencyGraph::build(&instances).unwrap();
    Loaded {
        spec,
        instances,
        graph,
    }
}

/// Every (producer, consumer) pair where a target of one is a dep of the other,
/// found by comparing all pairs.
pub fn edge_oracle(instances: &[TaskInstance]) -> BTreeSet<(String, String)> {
    let mut edges = BTreeSet::new();
    for a in instances {
        for b in instances {
            if a.instance_id != b.instance_id && a.targets.iter().any(|t| b.deps.contains(t)) {
                edges.insert((a.instance_id.clone(), b.instance_id.clone()));
            }
        }
    }
    edges
}

/// Nodes reachable from `seeds` by at least one edge, minus the seeds.
pub fn closure_oracle(edges: &BTreeSet<(String, String)>, seeds: &[&str]) -> BTreeSet<String> {
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges {
        succ.entry(a).or_default().push(b);
    }
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<&str> = seeds.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        for &c in succ.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(c.to_string()) {
                queue.push_back(c);
            }
        }
    }
    for s in seeds {
        seen.remove(*s);
    }
    seen
}

/// Fixed point of "scheduled iff selected and (stale or a selected parent is
/// scheduled)", iterated naively until nothing changes.
pub fn fixpoint_oracle(
    ids: &[String],
    edges: &BTreeSet<(String, String)>,
    stale: &BTreeSet<String>,
    selected: &BTreeSet<String>,
) -> BTreeSet<String> {
    let mut scheduled: BTreeSet<String> = stale.intersection(selected).cloned().collect();
    loop {
        let mut changed = false;
        for id in ids {
            if !selected.contains(id) || scheduled.contains(id) {
                continue;
            }
            if edges
                .iter()
                .any(|(p, c)| c == id && selected.contains(p) && scheduled.contains(p))
            {
                scheduled.insert(id.clone());
                changed = true;
            }
        }
        if !changed {
            return scheduled;
        }
    }
}

/// A random acyclic manifest: up to `max_tasks` tasks over up to
/// `max_recordings` recordings, each depending on a random subset of tasks
/// generated before it, declared in shuffled order.
pub fn random_manifest(rng: &mut impl Rng, max_tasks: usize, max_recordings: usize) -> String {
    let n_tasks = rng.gen_range(1..=max_tasks);
    let n_recs = rng.gen_range(1..=max_recordings);
    let per_rec: Vec<bool> = (0..n_tasks).map(|_| rng.gen_bool(0.6)).collect();
    let target = |j: usize| {
        if per_rec[j] {
            format!("t{j}/{{recording}}.dat")
        } else {
            format!("t{j}.dat")
        }
    };
    let mut blocks = Vec::new();
    for i in 0..n_tasks {
        let mut deps: Vec<String> = (0..i)
            .filter(|_| rng.gen_bool(0.4))
            .map(target)
            .collect();
        if rng.gen_bool(0.3) {
            deps.push(if per_rec[i] {
                "raw/{recording}.in".to_string()
            } else {
                "raw/table.in".to_string()
            });
        }
        let kind = if per_rec[i] { "per_recording" } else { "aggregate" };
        let command = if per_rec[i] {
            format!("echo t{i} {{recording}}")
        } else {
            format!("echo t{i}")
        };
        let deps: Vec<String> = deps.iter().map(|d| format!("\"{d}\"")).collect();
        blocks.push(format!(
            "[[task]]\nname = \"t{i}\"\nkind = \"{kind}\"\ncommand = \"{command}\"\ndeps = [{}]\ntargets = [\"{}\"]\nno_report = true\n",
            deps.join(", "),
            target(i)
        ));
    }
    blocks.shuffle(rng);
    let recs: Vec<String> = (0..n_recs).map(|r| format!("\"r{r}\"")).collect();
    format!(
        "[pipeline]\nname = \"random\"\nrecordings = [{}]\n\n{}",
        recs.join(", "),
        blocks.join("\n")
    )
}

/// Section headings of an HTML report, in document order.
pub fn h2_headings(html: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = html;
    while let Some(start) = rest.find("<h2>") {
        let after = &rest[start + 4..];
        let end = after.find("</h2>").unwrap();
        out.push(after[..end].to_string());
        rest = &after[end..];
    }
    out
}

/// Materialises every file of a random manifest and records fingerprints for
/// all instances outside `stale`.
pub fn seed_state(l: &Loaded, stale: &BTreeSet<String>) -> StateStore {
    let root = &l.spec.root;
    for inst in &l.instances {
        for f in inst.deps.iter().chain(&inst.targets) {
            let p = root.join(f);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, f).unwrap();
        }
    }
    let mut state = StateStore::empty(StateStore::default_path(root));
    for inst in l.instances.iter().filter(|i| !stale.contains(&i.instance_id)) {
        let fp = fingerprint(inst, &RunContext { root, params: &l.spec.params }).unwrap();
        state.insert(
            inst.instance_id.clone(),
            StateRecord::new(fp, inst.targets.clone(), Utc::now()),
        );
    }
    state
}

/// Writes a script with exactly the requested number of each line kind,
/// shuffled, and returns those counts.
pub fn write_script(rng: &mut StdRng, path: &Path, prefix: &str) -> LineCounts {
    let want = LineCounts {
        code: rng.gen_range(5..80),
        comment: rng.gen_range(0..30),
        blank: rng.gen_range(0..15),
    };
    let mut lines: Vec<String> = Vec::new();
    for i in 0..want.code {
        lines.push(format!("{}x{i} = f({i})  {prefix} trailing", " ".repeat(i % 3)));
    }
    for i in 0..want.comment {
        lines.push(format!("{}{prefix} note {i}", "\t".repeat(i % 2)));
    }
    for i in 0..want.blank {
        lines.push(" ".repeat(i % 4));
    }
    lines.shuffle(rng);
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
    want
}

/// Task names with report items of the given kind, in declaration order,
/// read straight from the TOML.
pub fn declared_report_order(manifest: &str, kind: &str) -> Vec<String> {
    let doc: toml::Table = manifest.parse().unwrap();
    doc["task"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| t["kind"].as_str() == Some(kind))
        .filter(|t| t.get("report").and_then(|r| r.as_array()).is_some_and(|r| !r.is_empty()))
        .map(|t| t["name"].as_str().unwrap().to_string())
        .collect()
}
