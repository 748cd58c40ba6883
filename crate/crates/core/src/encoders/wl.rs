use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::ilg::{build_ilg, InstanceGraph};
use super::{EmbeddingVector, EncoderError, EncodingMode};
use crate::pddl::{AtomId, GroundedTask, SymbolicState};
use crate::trajectory::Trajectory;

pub const DEFAULT_ITERATIONS: usize = 2;

#[derive(Debug, Clone)]
enum ColorDef {
    Initial(String),
    Refined { own: u32, neighbours: Vec<(u32, u32)> },
}

/// Dictionary from WL colour strings to dense indices.
///
/// While collecting, colours receive provisional ids in discovery order.
/// [`freeze`](Self::freeze) renumbers them so that the index of a colour is
/// its position in the sorted list of colour strings, iteration by
/// iteration. Frozen vocabularies never change.
#[derive(Debug, Clone)]
pub struct WlVocabulary {
    k: usize,
    frozen: bool,
    colors: Vec<String>,
    defs: Vec<(usize, ColorDef)>,
    index: HashMap<String, u32>,
}

fn initial_key(buf: &mut String, feature: &str) {
    buf.clear();
    buf.push_str("00|");
    buf.push_str(feature);
}

fn refined_key(buf: &mut String, iteration: usize, own: u32, neighbours: &[(u32, u32)]) {
    buf.clear();
    let _ = write!(buf, "{iteration:02}|{own}|");
    for (i, (c, l)) in neighbours.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        let _ = write!(buf, "{c}.{l}");
    }
}

impl WlVocabulary {
    pub fn new(k: usize) -> Self {
        assert!(k < 100, "iteration count must stay below 100");
        Self { k, frozen: false, colors: Vec::new(), defs: Vec::new(), index: HashMap::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Number of known colours `D`.
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[String] {
        &self.colors
    }

    pub fn index_of(&self, color: &str) -> Option<u32> {
        self.index.get(color).copied()
    }

    fn intern(&mut self, key: &str, iteration: usize, def: impl FnOnce() -> ColorDef) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.colors.len() as u32;
        self.colors.push(key.to_string());
        self.index.insert(key.to_string(), id);
        self.defs.push((iteration, def()));
        id
    }

    /// Runs `k` refinement rounds, adding every colour met to the dictionary.
    pub fn collect(&mut self, graph: &InstanceGraph) -> Result<(), EncoderError> {
        let k = self.k;
        refine_collect(graph, k, self).map(|_| ())
    }

    /// Assigns final indices and makes the vocabulary immutable.
    pub fn freeze(&mut self) {
        if self.frozen {
            return;
        }
        let mut remap = vec![u32::MAX; self.defs.len()];
        let mut colors = Vec::with_capacity(self.defs.len());
        let mut buf = String::new();
        let top = self.defs.iter().map(|d| d.0).max().unwrap_or(0).max(self.k);
        for level in 0..=top {
            let mut batch: Vec<(String, usize)> = Vec::new();
            for (prov, (it, def)) in self.defs.iter().enumerate() {
                if *it != level {
                    continue;
                }
                match def {
                    ColorDef::Initial(feature) => initial_key(&mut buf, feature),
                    ColorDef::Refined { own, neighbours } => {
                        let mut nb: Vec<(u32, u32)> =
                            neighbours.iter().map(|&(c, l)| (remap[c as usize], l)).collect();
                        nb.sort_unstable();
                        refined_key(&mut buf, level, remap[*own as usize], &nb);
                    }
                }
                batch.push((buf.clone(), prov));
            }
            batch.sort();
            for (key, prov) in batch {
                remap[prov] = colors.len() as u32;
                colors.push(key);
            }
        }
        self.index = colors.iter().enumerate().map(|(i, c)| (c.clone(), i as u32)).collect();
        self.colors = colors;
        self.defs = Vec::new();
        self.frozen = true;
    }

    /// Frozen vocabulary from an ordered colour list.
    pub fn from_colors(k: usize, colors: Vec<String>) -> Result<Self, EncoderError> {
        let index: HashMap<String, u32> = colors.iter().enumerate().map(|(i, c)| (c.clone(), i as u32)).collect();
        if index.len() != colors.len() {
            return Err(EncoderError::Format("duplicate colour in vocabulary".into()));
        }
        Ok(Self { k, frozen: true, colors, defs: Vec::new(), index })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("WLVOCAB1 k={}\n", self.k);
        for c in &self.colors {
            out.push_str(c);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, EncoderError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| EncoderError::Format("empty vocabulary file".into()))?;
        let k = header
            .strip_prefix("WLVOCAB1 k=")
            .and_then(|k| k.trim().parse().ok())
            .ok_or_else(|| EncoderError::Format(format!("bad vocabulary header '{header}'")))?;
        Self::from_colors(k, lines.map(str::to_string).collect())
    }
}

/// Colour multiset `C^(k)`: the union over iterations `0..=k` of node
/// colours. Colours missing from a frozen vocabulary land in `oov`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColorMultiset {
    pub counts: BTreeMap<u32, usize>,
    pub oov: usize,
}

impl ColorMultiset {
    pub fn total(&self) -> usize {
        self.counts.values().sum::<usize>() + self.oov
    }
}

fn neighbour_colors(graph: &InstanceGraph, v: usize, prev: &[u32], out: &mut Vec<(u32, u32)>) -> bool {
    out.clear();
    for &(u, l) in &graph.adjacency[v] {
        let c = prev[u as usize];
        if c == u32::MAX {
            return false;
        }
        out.push((c, l));
    }
    out.sort_unstable();
    true
}

fn refine_collect(graph: &InstanceGraph, k: usize, vocab: &mut WlVocabulary) -> Result<Vec<u32>, EncoderError> {
    if vocab.frozen {
        return Err(EncoderError::FrozenVocabulary);
    }
    let n = graph.num_nodes();
    let mut all = Vec::with_capacity(n * (k + 1));
    let mut buf = String::new();
    let mut prev: Vec<u32> = graph
        .features
        .iter()
        .map(|f| {
            initial_key(&mut buf, f);
            vocab.intern(&buf, 0, || ColorDef::Initial(f.clone()))
        })
        .collect();
    all.extend_from_slice(&prev);
    let mut nb = Vec::new();
    for it in 1..=k {
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            neighbour_colors(graph, v, &prev, &mut nb);
            refined_key(&mut buf, it, prev[v], &nb);
            let own = prev[v];
            let id = vocab.intern(&buf, it, || ColorDef::Refined { own, neighbours: nb.clone() });
            next.push(id);
        }
        all.extend_from_slice(&next);
        prev = next;
    }
    Ok(all)
}

/// Frozen-mode refinement. Unknown colours are `u32::MAX` and poison every
/// colour derived from them.
fn refine_frozen(graph: &InstanceGraph, k: usize, vocab: &WlVocabulary, mut sink: impl FnMut(u32)) {
    let n = graph.num_nodes();
    let mut buf = String::new();
    let mut prev: Vec<u32> = graph
        .features
        .iter()
        .map(|f| {
            initial_key(&mut buf, f);
            vocab.index_of(&buf).unwrap_or(u32::MAX)
        })
        .collect();
    prev.iter().for_each(|&c| sink(c));
    let mut nb = Vec::new();
    let mut next = vec![0u32; n];
    for it in 1..=k {
        for v in 0..n {
            next[v] = if prev[v] == u32::MAX || !neighbour_colors(graph, v, &prev, &mut nb) {
                u32::MAX
            } else {
                refined_key(&mut buf, it, prev[v], &nb);
                vocab.index_of(&buf).unwrap_or(u32::MAX)
            };
            sink(next[v]);
        }
        std::mem::swap(&mut prev, &mut next);
    }
}

/// Refines `graph` for `k` rounds. In collect mode the vocabulary grows and
/// the returned ids are provisional until it is frozen.
pub fn wl_refine(
    graph: &InstanceGraph,
    k: usize,
    vocab: &mut WlVocabulary,
    collect: bool,
) -> Result<ColorMultiset, EncoderError> {
    let mut ms = ColorMultiset::default();
    if collect {
        for c in refine_collect(graph, k, vocab)? {
            *ms.counts.entry(c).or_default() += 1;
        }
    } else {
        if !vocab.frozen {
            return Err(EncoderError::NotFrozen);
        }
        refine_frozen(graph, k, vocab, |c| {
            if c == u32::MAX {
                ms.oov += 1;
            } else {
                *ms.counts.entry(c).or_default() += 1;
            }
        });
    }
    Ok(ms)
}

/// Colour histogram of `G_{s,g}`: `D` counts followed by the OOV bucket.
pub fn embed_wl(
    state: &SymbolicState,
    goal: &[AtomId],
    task: &GroundedTask,
    vocab: &WlVocabulary,
) -> Result<EmbeddingVector, EncoderError> {
    embed_graph(&build_ilg(state, goal, task), vocab)
}

pub fn embed_graph(graph: &InstanceGraph, vocab: &WlVocabulary) -> Result<EmbeddingVector, EncoderError> {
    if !vocab.frozen {
        return Err(EncoderError::NotFrozen);
    }
    if vocab.is_empty() {
        return Err(EncoderError::EmptyVocabulary);
    }
    let d = vocab.len();
    let mut values = vec![0.0; d + 1];
    refine_frozen(graph, vocab.k, vocab, |c| {
        values[if c == u32::MAX { d } else { c as usize }] += 1.0;
    });
    Ok(EmbeddingVector { values, mode: EncodingMode::Wl })
}

/// The goal seen as a state: every goal atom is an achieved goal atom.
pub fn goal_as_state(task: &GroundedTask, goal: &[AtomId]) -> SymbolicState {
    SymbolicState::from_atoms(task.num_atoms(), goal.iter().copied())
}

/// Collects colours from every `(s_t, g)` pair and from the goal graph of
/// each trajectory, then freezes.
pub fn collect_vocabulary<'a>(
    data: impl IntoIterator<Item = (&'a GroundedTask, &'a Trajectory)>,
    k: usize,
) -> WlVocabulary {
    let mut vocab = WlVocabulary::new(k);
    for (task, traj) in data {
        for s in &traj.states {
            refine_collect(&build_ilg(s, &traj.goal, task), k, &mut vocab).expect("vocabulary is not frozen");
        }
        let g = goal_as_state(task, &traj.goal);
        refine_collect(&build_ilg(&g, &traj.goal, task), k, &mut vocab).expect("vocabulary is not frozen");
    }
    vocab.freeze();
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, edges: &[(usize, usize)]) -> InstanceGraph {
        let e: Vec<_> = edges.iter().map(|&(u, v)| (u, v, 1)).collect();
        InstanceGraph::from_parts(vec!["x".into(); n], &e)
    }

    fn frozen_on(graphs: &[&InstanceGraph], k: usize) -> WlVocabulary {
        let mut v = WlVocabulary::new(k);
        for g in graphs {
            v.collect(g).unwrap();
        }
        v.freeze();
        v
    }

    #[test]
    fn zero_iterations_count_initial_features() {
        let g = InstanceGraph::from_parts(vec!["a".into(), "b".into(), "a".into()], &[(0, 1, 1)]);
        let mut v = WlVocabulary::new(0);
        v.collect(&g).unwrap();
        v.freeze();
        assert_eq!(v.colors(), &["00|a", "00|b"]);
        let ms = wl_refine(&g, 0, &mut v, false).unwrap();
        assert_eq!(ms.counts, BTreeMap::from([(0, 2), (1, 1)]));
    }

    #[test]
    fn path_and_star_separate_after_one_round() {
        // Path 0-1-2-3: two endpoints of degree 1, two inner nodes of degree 2.
        // Star centred at 0: three leaves of degree 1, one centre of degree 3.
        let path = uniform(4, &[(0, 1), (1, 2), (2, 3)]);
        let star = uniform(4, &[(0, 1), (0, 2), (0, 3)]);
        let mut v = WlVocabulary::new(1);
        let p = wl_refine(&path, 1, &mut v, true).unwrap();
        let s = wl_refine(&star, 1, &mut v, true).unwrap();
        assert_ne!(p, s);
        // Iteration 0 plus degree classes {1, 2} and {1, 3}.
        assert_eq!(v.len(), 1 + 3);
        let mut sizes_p: Vec<usize> = p.counts.values().copied().collect();
        sizes_p.sort();
        assert_eq!(sizes_p, vec![2, 2, 4]);
        let mut sizes_s: Vec<usize> = s.counts.values().copied().collect();
        sizes_s.sort();
        assert_eq!(sizes_s, vec![1, 3, 4]);
    }

    #[test]
    fn edge_labels_matter() {
        let a = InstanceGraph::from_parts(vec!["x".into(); 2], &[(0, 1, 1)]);
        let b = InstanceGraph::from_parts(vec!["x".into(); 2], &[(0, 1, 2)]);
        let mut v = WlVocabulary::new(1);
        let ma = wl_refine(&a, 1, &mut v, true).unwrap();
        let mb = wl_refine(&b, 1, &mut v, true).unwrap();
        assert_ne!(ma, mb);
    }

    #[test]
    fn frozen_indices_are_sorted_and_agree_with_collection() {
        let path = uniform(4, &[(0, 1), (1, 2), (2, 3)]);
        let star = uniform(4, &[(0, 1), (0, 2), (0, 3)]);
        let v = frozen_on(&[&star, &path], 2);
        let mut sorted = v.colors().to_vec();
        sorted.sort();
        assert_eq!(sorted, v.colors());
        let p = embed_graph(&path, &v).unwrap();
        assert_eq!(p.values.iter().sum::<f64>(), 12.0);
        assert_eq!(p.oov(), 0.0);
        let again = frozen_on(&[&path, &star], 2);
        assert_eq!(again.colors(), v.colors());
    }

    #[test]
    fn unseen_structure_goes_to_oov_and_propagates() {
        let path = uniform(3, &[(0, 1), (1, 2)]);
        let v = frozen_on(&[&path], 2);
        // In a triangle every node looks like the middle of the path after one
        // round; the second round sees middle-middle neighbours, which is new.
        let tri = uniform(3, &[(0, 1), (1, 2), (0, 2)]);
        let e = embed_graph(&tri, &v).unwrap();
        assert_eq!(e.values.len(), v.len() + 1);
        assert_eq!(e.oov(), 3.0);
        assert_eq!(e.values[..v.len()].iter().sum::<f64>(), 6.0);
        // A single extra label is unknown from iteration 0 and poisons its neighbour.
        let odd = InstanceGraph::from_parts(vec!["x".into(), "y".into()], &[(0, 1, 1)]);
        let e = embed_graph(&odd, &v).unwrap();
        assert_eq!(e.oov(), 5.0);
    }

    #[test]
    fn frozen_vocabulary_rejects_collection_and_empty_vocabulary_rejects_embedding() {
        let g = uniform(2, &[(0, 1)]);
        let mut v = frozen_on(&[&g], 1);
        assert!(matches!(wl_refine(&g, 1, &mut v, true), Err(EncoderError::FrozenVocabulary)));
        let mut empty = WlVocabulary::new(2);
        assert!(matches!(wl_refine(&g, 1, &mut empty, false), Err(EncoderError::NotFrozen)));
        empty.freeze();
        assert!(matches!(embed_graph(&g, &empty), Err(EncoderError::EmptyVocabulary)));
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let g = InstanceGraph::from_parts(vec!["on:apg".into(), "object".into()], &[(0, 1, 1)]);
        let v = frozen_on(&[&g], 2);
        let back = WlVocabulary::parse(&v.to_text()).unwrap();
        assert_eq!(back.colors(), v.colors());
        assert_eq!(back.k(), 2);
        assert!(WlVocabulary::parse("WLVOCAB2 k=1\n").is_err());
    }
}
