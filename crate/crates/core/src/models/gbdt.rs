use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Memory, ModelError, TargetMode, TransitionExample, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub max_rounds: usize,
    pub patience: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub max_bins: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            learning_rate: 0.1,
            max_rounds: 1000,
            patience: 10,
            lambda: 1.0,
            min_child_weight: 1.0,
            max_bins: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_weight(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
                TreeNode::Leaf { weight } => return weight,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(t, left as usize).max(go(t, right as usize)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutputDim {
    Constant(f64),
    Boosted { base: f64, trees: Vec<Tree> },
}

/// One boosted ensemble per output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub mode: TargetMode,
    pub width: usize,
    pub config: TreeConfig,
    pub dims: Vec<OutputDim>,
    pub rounds: usize,
}

impl TreeEnsembleModel {
    pub fn predict_raw(&self, input: &[f64]) -> Vec<f64> {
        let lr = self.config.learning_rate;
        self.dims
            .iter()
            .map(|d| match d {
                OutputDim::Constant(c) => *c,
                OutputDim::Boosted { base, trees } => base + trees.iter().map(|t| t.leaf_weight(input) * lr).sum::<f64>(),
            })
            .collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.dims
            .iter()
            .map(|d| match d {
                OutputDim::Constant(_) => 0,
                OutputDim::Boosted { trees, .. } => trees.iter().map(|t| t.nodes.len()).sum(),
            })
            .sum()
    }

    pub fn constant_dims(&self) -> usize {
        self.dims.iter().filter(|d| matches!(d, OutputDim::Constant(_))).count()
    }

    /// Human-readable dump of every tree.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "mode={} width={} rounds={} learning_rate={}\n",
            self.mode, self.width, self.rounds, self.config.learning_rate
        );
        for (d, dim) in self.dims.iter().enumerate() {
            match dim {
                OutputDim::Constant(c) => {
                    let _ = writeln!(out, "dim {d} constant {c}");
                }
                OutputDim::Boosted { base, trees } => {
                    let _ = writeln!(out, "dim {d} base {base} trees {}", trees.len());
                    for (k, tree) in trees.iter().enumerate() {
                        let _ = writeln!(out, "tree {k}");
                        for (i, node) in tree.nodes.iter().enumerate() {
                            let _ = match node {
                                TreeNode::Split { feature, threshold, left, right } => {
                                    writeln!(out, "  {i}:[f{feature}<={threshold}] yes={left} no={right}")
                                }
                                TreeNode::Leaf { weight } => writeln!(out, "  {i}:leaf={weight}"),
                            };
                        }
                    }
                }
            }
        }
        out
    }
}

impl TransitionModel for TreeEnsembleModel {
    fn mode(&self) -> TargetMode {
        self.mode
    }

    fn width(&self) -> usize {
        self.width
    }

    fn step(&self, _memory: &Memory, state: &[f64], goal: &[f64]) -> (Vec<f64>, Memory) {
        let mut input = Vec::with_capacity(2 * self.width);
        input.extend_from_slice(state);
        input.extend_from_slice(goal);
        (self.predict_raw(&input), Memory::None)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreeTrainReport {
    /// Mean squared error over all outputs after each round, round 0 being
    /// the base scores.
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_round: usize,
    pub constant_dims: usize,
    pub used_features: usize,
}

/// Quantised training features. Constant and duplicate columns are dropped.
struct Binned {
    features: Vec<u32>,
    /// Threshold separating bin `b` from bin `b + 1`.
    thresholds: Vec<Vec<f64>>,
    cols: Vec<Vec<u8>>,
    offsets: Vec<usize>,
    total_bins: usize,
}

impl Binned {
    fn new(rows: &[&[f64]], max_bins: usize) -> Self {
        let n_features = rows.first().map_or(0, |r| r.len());
        let max_bins = max_bins.clamp(2, 256);
        let mut seen: HashSet<Vec<u8>> = HashSet::new();
        let (mut features, mut thresholds, mut cols, mut offsets) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut total_bins = 0;
        for f in 0..n_features {
            let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            values.sort_by(f64::total_cmp);
            let mut distinct = values.clone();
            distinct.dedup();
            if distinct.len() < 2 {
                continue;
            }
            let uppers: Vec<f64> = if distinct.len() <= max_bins {
                distinct.clone()
            } else {
                let mut u: Vec<f64> =
                    (1..=max_bins).map(|i| values[(i * values.len()).div_ceil(max_bins) - 1]).collect();
                u.dedup();
                u
            };
            let col: Vec<u8> = rows.iter().map(|r| uppers.partition_point(|&u| u < r[f]) as u8).collect();
            if !seen.insert(col.clone()) {
                continue;
            }
            let th = uppers[..uppers.len() - 1]
                .iter()
                .map(|&u| {
                    let next = distinct[distinct.partition_point(|&d| d <= u)];
                    u + (next - u) / 2.0
                })
                .collect();
            features.push(f as u32);
            thresholds.push(th);
            cols.push(col);
            offsets.push(total_bins);
            total_bins += uppers.len();
        }
        Self { features, thresholds, cols, offsets, total_bins }
    }

    fn bins(&self, j: usize) -> usize {
        self.thresholds[j].len() + 1
    }
}

struct Hist {
    g: Vec<f64>,
    h: Vec<f64>,
}

struct TreeBuilder<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    cfg: &'a TreeConfig,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn hist(&self, rows: &[u32]) -> Hist {
        let mut hist = Hist { g: vec![0.0; self.binned.total_bins], h: vec![0.0; self.binned.total_bins] };
        for (j, col) in self.binned.cols.iter().enumerate() {
            let off = self.binned.offsets[j];
            for &i in rows {
                let b = off + col[i as usize] as usize;
                hist.g[b] += self.grad[i as usize];
                hist.h[b] += 1.0;
            }
        }
        hist
    }

    fn leaf(&mut self, g: f64, h: f64) -> u32 {
        self.nodes.push(TreeNode::Leaf { weight: -g / (h + self.cfg.lambda) });
        self.nodes.len() as u32 - 1
    }

    fn build(&mut self, rows: &mut [u32], hist: Hist, depth: usize) -> u32 {
        let g: f64 = rows.iter().map(|&i| self.grad[i as usize]).sum();
        let h = rows.len() as f64;
        let first = self.grad[rows[0] as usize];
        let uniform = rows.iter().all(|&i| self.grad[i as usize] == first);
        if depth >= self.cfg.max_depth || rows.len() < 2 || uniform {
            return self.leaf(g, h);
        }
        let lambda = self.cfg.lambda;
        let parent = g * g / (h + lambda);
        let mut best: Option<(f64, usize, usize)> = None;
        for j in 0..self.binned.features.len() {
            let off = self.binned.offsets[j];
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..self.binned.bins(j) - 1 {
                gl += hist.g[off + b];
                hl += hist.h[off + b];
                let hr = h - hl;
                if hl < self.cfg.min_child_weight || hr < self.cfg.min_child_weight {
                    continue;
                }
                let gr = g - gl;
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, j, b));
                }
            }
        }
        let Some((_, j, b)) = best else {
            return self.leaf(g, h);
        };
        let col = &self.binned.cols[j];
        let mut split = 0;
        for k in 0..rows.len() {
            if col[rows[k] as usize] as usize <= b {
                rows.swap(k, split);
                split += 1;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { weight: 0.0 });
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left_smaller = left_rows.len() <= right_rows.len();
        let small_hist = self.hist(if left_smaller { left_rows } else { right_rows });
        let large_hist = Hist {
            g: hist.g.iter().zip(&small_hist.g).map(|(p, s)| p - s).collect(),
            h: hist.h.iter().zip(&small_hist.h).map(|(p, s)| p - s).collect(),
        };
        let (lh, rh) = if left_smaller {
            (small_hist, large_hist)
        } else {
            (large_hist, small_hist)
        };
        let left = self.build(left_rows, lh, depth + 1);
        let right = self.build(right_rows, rh, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: self.binned.features[j],
            threshold: self.binned.thresholds[j][b],
            left,
            right,
        };
        id as u32
    }
}

fn fit_tree(binned: &Binned, grad: &[f64], cfg: &TreeConfig) -> Tree {
    let mut rows: Vec<u32> = (0..grad.len() as u32).collect();
    let mut builder = TreeBuilder { binned, grad, cfg, nodes: Vec::new() };
    let hist = builder.hist(&rows);
    builder.build(&mut rows, hist, 0);
    Tree { nodes: builder.nodes }
}

fn mse(preds: &[Vec<f64>], data: &[TransitionExample]) -> f64 {
    if data.is_empty() || preds.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for (d, p) in preds.iter().enumerate() {
        for (i, ex) in data.iter().enumerate() {
            let e = p[i] - ex.target[d];
            s += e * e;
        }
    }
    s / (data.len() * preds.len()) as f64
}

/// Squared-error boosting with early stopping on the aggregate validation
/// error. The ensemble is truncated to the best round.
pub fn train_tree_ensemble(
    train: &[TransitionExample],
    val: &[TransitionExample],
    mode: TargetMode,
    cfg: &TreeConfig,
) -> Result<(TreeEnsembleModel, TreeTrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset("training examples"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptyDataset("validation examples"));
    }
    let width = train[0].target.len();
    for ex in train.iter().chain(val) {
        if ex.target.len() != width {
            return Err(ModelError::DimensionMismatch { expected: width, found: ex.target.len() });
        }
        if ex.input.len() != 2 * width {
            return Err(ModelError::DimensionMismatch { expected: 2 * width, found: ex.input.len() });
        }
    }
    let rows: Vec<&[f64]> = train.iter().map(|e| e.input.as_slice()).collect();
    let binned = Binned::new(&rows, cfg.max_bins);

    struct DimState {
        base: f64,
        constant: bool,
        trees: Vec<Tree>,
        train_pred: Vec<f64>,
        val_pred: Vec<f64>,
        targets: Vec<f64>,
    }
    let mut dims: Vec<DimState> = (0..width)
        .map(|d| {
            let targets: Vec<f64> = train.iter().map(|e| e.target[d]).collect();
            let constant = targets.iter().all(|&t| t == targets[0]);
            let base = if constant { targets[0] } else { targets.iter().sum::<f64>() / targets.len() as f64 };
            DimState {
                base,
                constant,
                trees: Vec::new(),
                train_pred: vec![base; train.len()],
                val_pred: vec![base; val.len()],
                targets,
            }
        })
        .collect();

    let preds = |dims: &[DimState], val_side: bool| -> Vec<Vec<f64>> {
        dims.iter().map(|d| if val_side { d.val_pred.clone() } else { d.train_pred.clone() }).collect()
    };
    let mut report = TreeTrainReport {
        constant_dims: dims.iter().filter(|d| d.constant).count(),
        used_features: binned.features.len(),
        ..Default::default()
    };
    report.train_mse.push(mse(&preds(&dims, false), train));
    report.val_mse.push(mse(&preds(&dims, true), val));
    let mut best = (report.val_mse[0], 0usize);
    let lr = cfg.learning_rate;
    for round in 1..=cfg.max_rounds {
        if dims.iter().all(|d| d.constant) {
            break;
        }
        dims.par_iter_mut().filter(|d| !d.constant).for_each(|d| {
            let grad: Vec<f64> = d.train_pred.iter().zip(&d.targets).map(|(p, y)| p - y).collect();
            let tree = fit_tree(&binned, &grad, cfg);
            for (p, ex) in d.train_pred.iter_mut().zip(train) {
                *p += tree.leaf_weight(&ex.input) * lr;
            }
            for (p, ex) in d.val_pred.iter_mut().zip(val) {
                *p += tree.leaf_weight(&ex.input) * lr;
            }
            d.trees.push(tree);
        });
        report.train_mse.push(mse(&preds(&dims, false), train));
        let v = mse(&preds(&dims, true), val);
        report.val_mse.push(v);
        if v < best.0 {
            best = (v, round);
        } else if round - best.1 >= cfg.patience {
            break;
        }
    }
    report.best_round = best.1;
    let out_dims = dims
        .into_iter()
        .map(|mut d| {
            if d.constant {
                OutputDim::Constant(d.base)
            } else {
                d.trees.truncate(best.1);
                OutputDim::Boosted { base: d.base, trees: d.trees }
            }
        })
        .collect();
    let model = TreeEnsembleModel { mode, width, config: *cfg, dims: out_dims, rounds: best.1 };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ex(input: Vec<f64>, target: Vec<f64>) -> TransitionExample {
        TransitionExample { input, target }
    }

    #[test]
    fn single_example_is_reproduced_exactly() {
        let data = vec![ex(vec![1.0, 2.0, 0.0, 3.0], vec![0.5, -1.0])];
        let (m, r) = train_tree_ensemble(&data, &data, TargetMode::Delta, &TreeConfig::default()).unwrap();
        assert_eq!(m.predict_raw(&data[0].input), vec![0.5, -1.0]);
        assert_eq!(m.constant_dims(), 2);
        assert_eq!(m.total_nodes(), 0);
        assert_eq!(r.best_round, 0);
    }

    #[test]
    fn constant_dimension_has_no_trees() {
        let data: Vec<_> = (0..20).map(|i| ex(vec![i as f64, 0.0, 1.0, 1.0], vec![7.0, (i % 3) as f64])).collect();
        let (m, _) = train_tree_ensemble(&data, &data, TargetMode::State, &TreeConfig::default()).unwrap();
        assert_eq!(m.dims[0], OutputDim::Constant(7.0));
        assert!(matches!(&m.dims[1], OutputDim::Boosted { trees, .. } if !trees.is_empty()));
        for e in &data {
            assert_eq!(m.predict_raw(&e.input)[0], 7.0);
        }
    }

    #[test]
    fn learns_a_step_function_and_training_loss_never_rises() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let make = |rng: &mut rand_chacha::ChaCha8Rng| {
            let a: f64 = rng.gen_range(0..10) as f64;
            let b: f64 = rng.gen_range(0..10) as f64;
            let y = if a > 4.0 { 1.0 } else { -1.0 } + if b > 6.0 { 0.5 } else { 0.0 };
            ex(vec![a, b], vec![y])
        };
        let train: Vec<_> = (0..200).map(|_| make(&mut rng)).collect();
        let val: Vec<_> = (0..50).map(|_| make(&mut rng)).collect();
        let (m, r) = train_tree_ensemble(&train, &val, TargetMode::State, &TreeConfig::default()).unwrap();
        for w in r.train_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{w:?}");
        }
        assert!(r.val_mse[r.best_round] < 1e-3);
        assert!((m.predict_raw(&[9.0, 9.0])[0] - 1.5).abs() < 0.05);
        assert!((m.predict_raw(&[0.0, 0.0])[0] + 1.0).abs() < 0.05);
        assert!(m.dims.iter().all(|d| match d {
            OutputDim::Boosted { trees, .. } => trees.iter().all(|t| t.depth() <= 8),
            OutputDim::Constant(_) => true,
        }));
    }

    #[test]
    fn early_stopping_keeps_the_best_round() {
        // Validation targets disagree with training targets, so validation
        // error is best before any tree is added.
        let train: Vec<_> = (0..30).map(|i| ex(vec![i as f64, 0.0], vec![(i % 2) as f64])).collect();
        let val: Vec<_> = (0..30).map(|i| ex(vec![i as f64, 0.0], vec![((i + 1) % 2) as f64])).collect();
        let (m, r) = train_tree_ensemble(&train, &val, TargetMode::State, &TreeConfig::default()).unwrap();
        assert_eq!(r.best_round, 0);
        assert_eq!(r.val_mse.len(), 1 + 10);
        assert_eq!(m.total_nodes(), 0);
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let data: Vec<_> = (0..40).map(|i| ex(vec![(i % 7) as f64, (i % 5) as f64], vec![(i % 3) as f64 - 1.0])).collect();
        let (a, _) = train_tree_ensemble(&data, &data, TargetMode::Delta, &TreeConfig::default()).unwrap();
        let (b, _) = train_tree_ensemble(&data, &data, TargetMode::Delta, &TreeConfig::default()).unwrap();
        assert_eq!(a, b);
        let saved = super::super::SavedModel::Tree(a.clone());
        let back = super::super::SavedModel::from_json(&saved.to_json()).unwrap();
        let super::super::SavedModel::Tree(back) = back else { panic!() };
        for e in &data {
            let (x, y) = (a.predict_raw(&e.input), back.predict_raw(&e.input));
            assert_eq!(x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        assert!(a.to_text().contains("yes="));
    }

    #[test]
    fn empty_sets_are_errors() {
        let data = vec![ex(vec![0.0, 0.0], vec![0.0])];
        assert!(train_tree_ensemble(&[], &data, TargetMode::State, &TreeConfig::default()).is_err());
        assert!(train_tree_ensemble(&data, &[], TargetMode::State, &TreeConfig::default()).is_err());
    }
}
