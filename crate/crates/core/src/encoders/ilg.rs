use crate::pddl::{AtomId, GroundedTask, SymbolicState};

/// Role of an atom node relative to the goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomStatus {
    /// True in the state and required by the goal.
    AchievedGoal,
    /// Required by the goal but not yet true.
    UnachievedGoal,
    /// True in the state, not mentioned by the goal.
    NonGoal,
}

impl AtomStatus {
    pub fn tag(self) -> &'static str {
        match self {
            AtomStatus::AchievedGoal => "apg",
            AtomStatus::UnachievedGoal => "upg",
            AtomStatus::NonGoal => "apn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Object(u32),
    Atom(AtomId, AtomStatus),
}

/// Instance learning graph of a (state, goal) pair.
///
/// Nodes are the task objects (canonical order) followed by one node per
/// atom in `state ∪ goal` (canonical order). Each atom node of arity `r` is
/// linked to its arguments by edges labelled `1..=r`; edges are stored in
/// both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceGraph {
    pub nodes: Vec<NodeKind>,
    pub features: Vec<String>,
    pub adjacency: Vec<Vec<(u32, u32)>>,
}

impl InstanceGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Builds a graph directly from labels and undirected labelled edges.
    pub fn from_parts(features: Vec<String>, edges: &[(usize, usize, u32)]) -> Self {
        let mut adjacency = vec![Vec::new(); features.len()];
        for &(u, v, l) in edges {
            adjacency[u].push((v as u32, l));
            adjacency[v].push((u as u32, l));
        }
        let nodes = (0..features.len() as u32).map(NodeKind::Object).collect();
        Self { nodes, features, adjacency }
    }
}

pub fn build_ilg(state: &SymbolicState, goal: &[AtomId], task: &GroundedTask) -> InstanceGraph {
    let n_obj = task.objects.len();
    let goal_set = SymbolicState::from_atoms(task.num_atoms(), goal.iter().copied());
    let mut atom_nodes: Vec<AtomId> = state.iter().chain(goal.iter().copied()).collect();
    atom_nodes.sort_unstable();
    atom_nodes.dedup();

    let mut nodes = Vec::with_capacity(n_obj + atom_nodes.len());
    let mut features = Vec::with_capacity(nodes.capacity());
    for (i, o) in task.objects.iter().enumerate() {
        nodes.push(NodeKind::Object(i as u32));
        features.push(if o.is_constant { o.name.clone() } else { "object".to_string() });
    }
    let mut adjacency = vec![Vec::new(); n_obj + atom_nodes.len()];
    for (j, &atom) in atom_nodes.iter().enumerate() {
        let status = match (state.contains(atom), goal_set.contains(atom)) {
            (true, true) => AtomStatus::AchievedGoal,
            (false, true) => AtomStatus::UnachievedGoal,
            _ => AtomStatus::NonGoal,
        };
        let ground = &task.atoms[atom as usize];
        let node = n_obj + j;
        nodes.push(NodeKind::Atom(atom, status));
        features.push(format!("{}:{}", task.predicates[ground.predicate].name, status.tag()));
        for (pos, &obj) in ground.args.iter().enumerate() {
            let label = pos as u32 + 1;
            adjacency[node].push((obj, label));
            adjacency[obj as usize].push((node as u32, label));
        }
    }
    InstanceGraph { nodes, features, adjacency }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::builtin;

    fn bw2() -> GroundedTask {
        let problem = "(define (problem b) (:domain blocksworld) (:objects b1 b2 - block)
            (:init (handempty) (ontable b1) (ontable b2) (clear b1) (clear b2))
            (:goal (on b1 b2)))";
        GroundedTask::from_texts(builtin::domain_text("blocksworld").unwrap(), problem).unwrap()
    }

    #[test]
    fn two_block_graph_has_eight_nodes() {
        let t = bw2();
        let g = build_ilg(&t.initial, &t.goal, &t);
        assert_eq!(g.num_nodes(), 2 + 5 + 1);
        assert_eq!(&g.features[..2], &["object", "object"]);
        assert!(g.features.contains(&"on:upg".to_string()));
        // clear x2, ontable x2: one edge each; on: two edges.
        assert_eq!(g.num_edges(), 4 + 2);
    }

    #[test]
    fn empty_goal_marks_everything_non_goal() {
        let t = bw2();
        let g = build_ilg(&t.initial, &[], &t);
        assert!(g.nodes.iter().all(|n| !matches!(n, NodeKind::Atom(_, s) if *s != AtomStatus::NonGoal)));
        assert_eq!(g.num_nodes(), 7);
    }

    #[test]
    fn nullary_atom_has_no_edges_and_labels_follow_positions() {
        let t = bw2();
        let g = build_ilg(&t.initial, &t.goal, &t);
        let handempty = g.features.iter().position(|f| f == "handempty:apn").unwrap();
        assert!(g.adjacency[handempty].is_empty());
        let on = g.features.iter().position(|f| f == "on:upg").unwrap();
        let mut labels: Vec<u32> = g.adjacency[on].iter().map(|&(_, l)| l).collect();
        labels.sort();
        assert_eq!(labels, vec![1, 2]);
    }

    #[test]
    fn achieved_goal_atoms() {
        let t = bw2();
        let s = t.state_from_names(["(on b1 b2)", "(ontable b2)", "(clear b1)", "(handempty)"]).unwrap();
        let g = build_ilg(&s, &t.goal, &t);
        assert!(g.features.contains(&"on:apg".to_string()));
        assert!(!g.features.contains(&"on:upg".to_string()));
    }
}
