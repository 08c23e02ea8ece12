//! Producer → consumer graph over task instances.
//!
//! An edge `(p, c)` exists iff one of `p`'s targets is one of `c`'s deps.
//! Manifest order never creates edges; it only breaks ties.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt::Write;

use thiserror::Error;

use crate::manifest::{PipelineSpec, TaskInstance, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("`{path}` is a target of both `{first}` and `{second}`")]
    DuplicateProducer {
        path: String,
        first: String,
        second: String,
    },
    #[error("instance `{0}` declared twice")]
    DuplicateInstance(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub task: String,
    pub kind: TaskKind,
    pub order_index: usize,
    pub recording_index: Option<usize>,
}

impl Node {
    fn sort_key(&self) -> (usize, usize) {
        (self.order_index, self.recording_index.unwrap_or(0))
    }
}

#[derive(Debug, Clone)]
pub struct DependencyGraph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    raw_inputs: BTreeSet<String>,
    producer_of: BTreeMap<String, String>,
}

impl DependencyGraph {
    /// Builds the graph. Nodes are kept in (manifest order, recording order).
    pub fn build(instances: &[TaskInstance]) -> Result<Self, GraphError> {
        let mut sorted: Vec<&TaskInstance> = instances.iter().collect();
        sorted.sort_by_key(|i| i.sort_key());

        let mut index = HashMap::with_capacity(sorted.len());
        let mut nodes = Vec::with_capacity(sorted.len());
        for (i, inst) in sorted.iter().enumerate() {
            if index.insert(inst.instance_id.clone(), i).is_some() {
                return Err(GraphError::DuplicateInstance(inst.instance_id.clone()));
            }
            nodes.push(Node {
                id: inst.instance_id.clone(),
                task: inst.task.clone(),
                kind: inst.kind,
                order_index: inst.order_index,
                recording_index: inst.recording_index,
            });
        }

        let mut producer_idx: HashMap<&str, usize> = HashMap::new();
        for (i, inst) in sorted.iter().enumerate() {
            for t in &inst.targets {
                if let Some(&first) = producer_idx.get(t.as_str()) {
                    if first != i {
                        return Err(GraphError::DuplicateProducer {
                            path: t.clone(),
                            first: nodes[first].id.clone(),
                            second: nodes[i].id.clone(),
                        });
                    }
                }
                producer_idx.insert(t, i);
            }
        }

        let n = nodes.len();
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        let mut raw_inputs = BTreeSet::new();
        for (c, inst) in sorted.iter().enumerate() {
            for d in &inst.deps {
                match producer_idx.get(d.as_str()) {
                    Some(&p) => {
                        if !children[p].contains(&c) {
                            children[p].push(c);
                            parents[c].push(p);
                        }
                    }
                    None => {
                        raw_inputs.insert(d.clone());
                    }
                }
            }
        }
        for list in children.iter_mut().chain(parents.iter_mut()) {
            list.sort_unstable();
        }

        let producer_of = producer_idx
            .into_iter()
            .map(|(path, i)| (path.to_string(), nodes[i].id.clone()))
            .collect();

        let graph = DependencyGraph {
            nodes,
            index,
            children,
            parents,
            raw_inputs,
            producer_of,
        };
        if let Some(cycle) = graph.find_cycle() {
            return Err(GraphError::CycleDetected(cycle));
        }
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parents_of(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    pub fn children_of(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    /// Paths read by some instance but produced by none.
    pub fn raw_inputs(&self) -> &BTreeSet<String> {
        &self.raw_inputs
    }

    pub fn producer_of(&self, path: &str) -> Option<&str> {
        self.producer_of.get(path).map(String::as_str)
    }

    /// All edges as `(producer, consumer)` ids, ordered by node position.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (p, cs) in self.children.iter().enumerate() {
            for &c in cs {
                out.push((self.nodes[p].id.as_str(), self.nodes[c].id.as_str()));
            }
        }
        out
    }

    /// Topological order as node indices; ties go to the earliest
    /// (manifest order, recording order) position.
    pub fn topo_indices(&self) -> Vec<usize> {
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<((usize, usize), usize)>> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| Reverse((self.nodes[i].sort_key(), i)))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &c in &self.children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(Reverse((self.nodes[c].sort_key(), c)));
                }
            }
        }
        debug_assert_eq!(order.len(), self.nodes.len(), "graph is acyclic by construction");
        order
    }

    pub fn topo_order(&self) -> Vec<&str> {
        self.topo_indices()
            .into_iter()
            .map(|i| self.nodes[i].id.as_str())
            .collect()
    }

    /// Node indices reachable from `seeds`. Seeds are always excluded.
    pub(crate) fn descendant_indices(&self, seeds: &[usize]) -> BTreeSet<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = seeds.to_vec();
        let mut out = BTreeSet::new();
        while let Some(i) = stack.pop() {
            for &c in &self.children[i] {
                if !seen[c] {
                    seen[c] = true;
                    out.insert(c);
                    stack.push(c);
                }
            }
        }
        for s in seeds {
            out.remove(s);
        }
        out
    }

    /// Everything reachable from `seeds` along edges, excluding the seeds.
    pub fn descendants<'a, I>(&self, seeds: I) -> Result<BTreeSet<String>, GraphError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut idx = Vec::new();
        for s in seeds {
            idx.push(
                self.index_of(s)
                    .ok_or_else(|| GraphError::UnknownInstance(s.to_string()))?,
            );
        }
        Ok(self
            .descendant_indices(&idx)
            .into_iter()
            .map(|i| self.nodes[i].id.clone())
            .collect())
    }

    /// Smallest-id node on any cycle, then a DFS visiting successors in id
    /// order until it returns to that node.
    fn find_cycle(&self) -> Option<Vec<String>> {
        let on_cycle = self.nodes_on_cycles();
        let start = on_cycle
            .into_iter()
            .min_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id))?;
        let by_id = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id));
            v
        };
        let mut visited = vec![false; self.nodes.len()];
        let mut path = vec![start];
        let mut iters = vec![by_id(&self.children[start]).into_iter()];
        visited[start] = true;
        while let Some(it) = iters.last_mut() {
            match it.next() {
                Some(next) if next == start => {
                    path.push(start);
                    return Some(path.iter().map(|&i| self.nodes[i].id.clone()).collect());
                }
                Some(next) if !visited[next] => {
                    visited[next] = true;
                    path.push(next);
                    iters.push(by_id(&self.children[next]).into_iter());
                }
                Some(_) => {}
                None => {
                    iters.pop();
                    path.pop();
                }
            }
        }
        None
    }

    /// Nodes left after repeatedly peeling off sources and sinks lie on or
    /// between cycles; among them, those that can reach themselves.
    fn nodes_on_cycles(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut removed = vec![false; n];
        while let Some(i) = queue.pop() {
            removed[i] = true;
            for &c in &self.children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        (0..n)
            .filter(|&i| !removed[i])
            .filter(|&i| self.descendant_indices_incl(i).contains(&i))
            .collect()
    }

    fn descendant_indices_incl(&self, seed: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![seed];
        while let Some(i) = stack.pop() {
            for &c in &self.children[i] {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
        out
    }

    /// Graphviz dot text with one node per task. Per-recording tasks are
    /// drawn as stacked boxes labelled with their instance count.
    pub fn export_dot(&self, spec: &PipelineSpec) -> String {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for node in &self.nodes {
            *counts.entry(node.task.as_str()).or_default() += 1;
        }
        let order: HashMap<&str, usize> = spec
            .tasks
            .iter()
            .map(|t| (t.name.as_str(), t.order_index))
            .collect();
        let task_edges: BTreeSet<(usize, usize)> = self
            .edges()
            .into_iter()
            .filter_map(|(p, c)| {
                let p = self.node(p)?;
                let c = self.node(c)?;
                (p.task != c.task).then(|| (order[p.task.as_str()], order[c.task.as_str()]))
            })
            .collect();

        let mut out = String::new();
        writeln!(out, "digraph {} {{", dot_id(&spec.name)).unwrap();
        out.push_str("  rankdir=TB;\n  node [shape=box];\n");
        for task in &spec.tasks {
            let n = counts.get(task.name.as_str()).copied().unwrap_or(0);
            match task.kind {
                TaskKind::PerRecording => writeln!(
                    out,
                    "  {} [label={}, shape=box3d];",
                    dot_id(&task.name),
                    dot_id(&format!("{} \u{d7}{n}", task.name))
                )
                .unwrap(),
                TaskKind::Aggregate => writeln!(
                    out,
                    "  {} [label={}];",
                    dot_id(&task.name),
                    dot_id(&task.name)
                )
                .unwrap(),
            }
        }
        for (p, c) in task_edges {
            writeln!(
                out,
                "  {} -> {};",
                dot_id(&spec.tasks[p].name),
                dot_id(&spec.tasks[c].name)
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }

    /// Dot text with one node per instance.
    pub fn export_dot_instances(&self, spec: &PipelineSpec) -> String {
        let mut out = String::new();
        writeln!(out, "digraph {} {{", dot_id(&spec.name)).unwrap();
        out.push_str("  rankdir=TB;\n  node [shape=box];\n");
        for node in &self.nodes {
            writeln!(out, "  {};", dot_id(&node.id)).unwrap();
        }
        for (p, c) in self.edges() {
            writeln!(out, "  {} -> {};", dot_id(p), dot_id(c)).unwrap();
        }
        out.push_str("}\n");
        out
    }
}

fn dot_id(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, order: usize, deps: &[&str], targets: &[&str]) -> TaskInstance {
        TaskInstance {
            instance_id: id.to_string(),
            task: id.to_string(),
            kind: TaskKind::Aggregate,
            order_index: order,
            recording: None,
            recording_index: None,
            deps: deps.iter().map(|s| s.to_string()).collect(),
            targets: targets.iter().map(|s| s.to_string()).collect(),
            report_items: vec![],
            command: String::new(),
            param_refs: vec![],
        }
    }

    fn chain() -> Vec<TaskInstance> {
        vec![
            inst("A", 0, &["raw"], &["f1"]),
            inst("B", 1, &["f1"], &["f2"]),
            inst("C", 2, &["f2"], &["f3"]),
        ]
    }

    #[test]
    fn linear_chain() {
        let g = DependencyGraph::build(&chain()).unwrap();
        assert_eq!(g.edges(), vec![("A", "B"), ("B", "C")]);
        assert_eq!(g.raw_inputs().iter().collect::<Vec<_>>(), ["raw"]);
        assert_eq!(g.topo_order(), ["A", "B", "C"]);
        assert_eq!(g.producer_of("f2"), Some("B"));
    }

    #[test]
    fn duplicate_producer() {
        let err = DependencyGraph::build(&[inst("A", 0, &[], &["f"]), inst("B", 1, &[], &["f"])])
            .unwrap_err();
        assert!(matches!(err, GraphError::DuplicateProducer { ref path, .. } if path == "f"));
    }

    #[test]
    fn duplicate_instance() {
        let err = DependencyGraph::build(&[inst("A", 0, &[], &["f"]), inst("A", 1, &[], &["g"])])
            .unwrap_err();
        assert_eq!(err, GraphError::DuplicateInstance("A".into()));
    }

    #[test]
    fn diamond_tie_break() {
        // manifest order deliberately differs from id order
        let g = DependencyGraph::build(&[
            inst("A", 0, &[], &["a"]),
            inst("C", 2, &["a"], &["c"]),
            inst("B", 1, &["a"], &["b"]),
            inst("D", 3, &["b", "c"], &["d"]),
        ])
        .unwrap();
        assert_eq!(g.topo_order(), ["A", "B", "C", "D"]);
    }

    #[test]
    fn descendants_basic() {
        let g = DependencyGraph::build(&chain()).unwrap();
        let d = g.descendants(["A"]).unwrap();
        assert_eq!(d.into_iter().collect::<Vec<_>>(), ["B", "C"]);
        assert!(g.descendants(["C"]).unwrap().is_empty());
        assert_eq!(
            g.descendants(["Z"]).unwrap_err(),
            GraphError::UnknownInstance("Z".into())
        );
        // seeds excluded even when reachable from another seed
        let d = g.descendants(["A", "B"]).unwrap();
        assert_eq!(d.into_iter().collect::<Vec<_>>(), ["C"]);
    }

    #[test]
    fn cycle_reports_smallest_start() {
        let err = DependencyGraph::build(&[
            inst("X", 0, &["z"], &["x"]),
            inst("Y", 1, &["x"], &["y"]),
            inst("Z", 2, &["y"], &["z"]),
            inst("A", 3, &[], &["a"]),
        ])
        .unwrap_err();
        assert_eq!(
            err,
            GraphError::CycleDetected(vec!["X".into(), "Y".into(), "Z".into(), "X".into()])
        );
    }

    #[test]
    fn self_loop_is_cycle() {
        let err = DependencyGraph::build(&[inst("S", 0, &["s"], &["s"])]).unwrap_err();
        assert_eq!(err, GraphError::CycleDetected(vec!["S".into(), "S".into()]));
    }

    #[test]
    fn cycle_report_is_reproducible_across_input_order() {
        let mut items = vec![
            inst("b", 0, &["a"], &["b"]),
            inst("a", 1, &["b", "c"], &["a"]),
            inst("c", 2, &["a"], &["c"]),
        ];
        let first = DependencyGraph::build(&items).unwrap_err();
        items.reverse();
        for (i, it) in items.iter_mut().enumerate() {
            it.order_index = i;
        }
        assert_eq!(DependencyGraph::build(&items).unwrap_err(), first);
        assert_eq!(
            first,
            GraphError::CycleDetected(vec!["a".into(), "b".into(), "a".into()])
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random DAG: node i may read the target of any j < i.
        fn dag() -> impl Strategy<Value = Vec<TaskInstance>> {
            (1usize..=8).prop_flat_map(|n| {
                proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n).prop_map(
                    move |adj| {
                        (0..n)
                            .map(|i| {
                                let deps: Vec<String> =
                                    (0..i).filter(|&j| adj[i][j]).map(|j| format!("f{j}")).collect();
                                let deps: Vec<&str> = deps.iter().map(String::as_str).collect();
                                inst(&format!("n{i}"), i, &deps, &[&format!("f{i}")])
                            })
                            .collect()
                    },
                )
            })
        }

        fn reach(g: &DependencyGraph) -> Vec<Vec<bool>> {
            let n = g.len();
            let mut r = vec![vec![false; n]; n];
            for (p, c) in g.edges() {
                r[g.index_of(p).unwrap()][g.index_of(c).unwrap()] = true;
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if r[i][k] && r[k][j] {
                            r[i][j] = true;
                        }
                    }
                }
            }
            r
        }

        proptest! {
            #[test]
            fn topo_respects_edges(items in dag()) {
                let g = DependencyGraph::build(&items).unwrap();
                let order = g.topo_order();
                prop_assert_eq!(order.len(), g.len());
                let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
                for (p, c) in g.edges() {
                    prop_assert!(pos[p] < pos[c]);
                }
            }

            #[test]
            fn descendants_match_closure(items in dag(), seed_mask in any::<u8>()) {
                let g = DependencyGraph::build(&items).unwrap();
                let r = reach(&g);
                let seeds: Vec<usize> = (0..g.len()).filter(|i| seed_mask >> i & 1 == 1).collect();
                let got = g.descendant_indices(&seeds);
                let want: BTreeSet<usize> = (0..g.len())
                    .filter(|&j| !seeds.contains(&j) && seeds.iter().any(|&s| r[s][j]))
                    .collect();
                prop_assert_eq!(got, want);
            }

            #[test]
            fn descendants_monotone(items in dag(), a in any::<u8>(), b in any::<u8>()) {
                let g = DependencyGraph::build(&items).unwrap();
                let small: Vec<usize> = (0..g.len()).filter(|i| a >> i & 1 == 1).collect();
                let big: Vec<usize> = (0..g.len()).filter(|i| (a | b) >> i & 1 == 1).collect();
                let ds = g.descendant_indices(&small);
                let db = g.descendant_indices(&big);
                for x in ds {
                    prop_assert!(db.contains(&x) || big.contains(&x));
                }
            }
        }
    }
}
