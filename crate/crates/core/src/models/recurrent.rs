use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddedTrajectory, Memory, ModelError, TargetMode, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `1 - cos(ŷ, y)` averaged over valid steps.
    Cosine,
    /// Squared error averaged over valid steps and outputs.
    Mse,
}

impl Loss {
    pub fn for_mode(mode: TargetMode) -> Self {
        match mode {
            TargetMode::State => Loss::Cosine,
            TargetMode::Delta => Loss::Mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecurrentConfig {
    pub hidden: usize,
    pub embed: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub loss: Option<Loss>,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            embed: 32,
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 250,
            patience: 25,
            clip_norm: 5.0,
            seed: 0,
            loss: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    off: usize,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    ws: Slot,
    bs: Slot,
    wg: Slot,
    bg: Slot,
    w_ih: [Slot; 2],
    w_hh: [Slot; 2],
    b_ih: [Slot; 2],
    b_hh: [Slot; 2],
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
    total: usize,
}

impl Layout {
    fn new(width: usize, embed: usize, hidden: usize) -> Self {
        let mut off = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { off, rows, cols };
            off += rows * cols;
            s
        };
        let (ws, bs, wg, bg) = (slot(embed, width), slot(embed, 1), slot(embed, width), slot(embed, 1));
        let g = 3 * hidden;
        let (ih0, hh0, bi0, bh0) = (slot(g, 2 * embed), slot(g, hidden), slot(g, 1), slot(g, 1));
        let (ih1, hh1, bi1, bh1) = (slot(g, hidden), slot(g, hidden), slot(g, 1), slot(g, 1));
        let (w1, b1, w2, b2) = (slot(hidden, hidden), slot(hidden, 1), slot(width, hidden), slot(width, 1));
        Self {
            ws,
            bs,
            wg,
            bg,
            w_ih: [ih0, ih1],
            w_hh: [hh0, hh1],
            b_ih: [bi0, bi1],
            b_hh: [bh0, bh1],
            w1,
            b1,
            w2,
            b2,
            total: off,
        }
    }

    /// `(slot, fan)` pairs used for uniform initialisation.
    fn init_groups(&self, hidden: usize) -> Vec<(Slot, usize)> {
        let mut v = vec![
            (self.ws, self.ws.cols),
            (self.bs, self.ws.cols),
            (self.wg, self.wg.cols),
            (self.bg, self.wg.cols),
        ];
        for l in 0..2 {
            for s in [self.w_ih[l], self.w_hh[l], self.b_ih[l], self.b_hh[l]] {
                v.push((s, hidden));
            }
        }
        v.extend([(self.w1, hidden), (self.b1, hidden), (self.w2, hidden), (self.b2, hidden)]);
        v
    }
}

fn mat(p: &[f64], s: Slot) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((s.rows, s.cols), &p[s.off..s.off + s.len()]).expect("slot shape")
}

fn vector(p: &[f64], s: Slot) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[s.off..s.off + s.len()])
}

fn mat_mut(p: &mut [f64], s: Slot) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut p[s.off..s.off + s.len()]).expect("slot shape")
}

const SMALL_BATCH: usize = 8;

/// `x · wᵀ`
fn matmul_t(x: &Array2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    if x.nrows() > SMALL_BATCH {
        return x.dot(&w.t());
    }
    let mut out = Array2::zeros((x.nrows(), w.nrows()));
    for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
        for (o, wr) in or.iter_mut().zip(w.rows()) {
            *o = wr.dot(&xr);
        }
    }
    out
}

/// `x · w`
fn matmul(x: &Array2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    if x.nrows() > SMALL_BATCH {
        return x.dot(&w);
    }
    let mut out = Array2::zeros((x.nrows(), w.ncols()));
    for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
        for (&a, wr) in xr.iter().zip(w.rows()) {
            if a != 0.0 {
                or.scaled_add(a, &wr);
            }
        }
    }
    out
}

fn acc_outer(grads: &mut [f64], s: Slot, delta: &Array2<f64>, input: &Array2<f64>) {
    let mut g = mat_mut(grads, s);
    if delta.nrows() > SMALL_BATCH {
        general_mat_mul(1.0, &delta.t(), input, 1.0, &mut g);
        return;
    }
    for (dr, ir) in delta.rows().into_iter().zip(input.rows()) {
        for (&d, mut gr) in dr.iter().zip(g.rows_mut()) {
            if d != 0.0 {
                gr.scaled_add(d, &ir);
            }
        }
    }
}

fn acc_bias(grads: &mut [f64], s: Slot, delta: &Array2<f64>) {
    for (g, d) in grads[s.off..s.off + s.len()].iter_mut().zip(delta.sum_axis(Axis(0))) {
        *g += d;
    }
}

fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    matmul_t(x, w) + b
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LayerCache {
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    ghn: Array2<f64>,
    h: Array2<f64>,
}

struct StepCache {
    state: Array2<f64>,
    x: Array2<f64>,
    layers: Vec<LayerCache>,
    a1: Array2<f64>,
    y1: Array2<f64>,
    out: Array2<f64>,
}

/// Padded batch of sequences: inputs, targets and validity mask per step.
struct Batch {
    goals: Array2<f64>,
    states: Vec<Array2<f64>>,
    targets: Vec<Array2<f64>>,
    mask: Vec<Vec<bool>>,
}

impl Batch {
    fn new(seqs: &[&EmbeddedTrajectory], mode: TargetMode) -> Self {
        let b = seqs.len();
        let w = seqs[0].width();
        let t_max = seqs.iter().map(|s| s.steps()).max().unwrap_or(0);
        let mut goals = Array2::zeros((b, w));
        for (i, s) in seqs.iter().enumerate() {
            goals.row_mut(i).assign(&ArrayView1::from(&s.goal));
        }
        let mut states = Vec::with_capacity(t_max);
        let mut targets = Vec::with_capacity(t_max);
        let mut mask = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut st = Array2::zeros((b, w));
            let mut tg = Array2::zeros((b, w));
            let mut m = vec![false; b];
            for (i, s) in seqs.iter().enumerate() {
                if t < s.steps() {
                    st.row_mut(i).assign(&ArrayView1::from(&s.states[t]));
                    tg.row_mut(i).assign(&Array1::from(s.target(t, mode)));
                    m[i] = true;
                }
            }
            states.push(st);
            targets.push(tg);
            mask.push(m);
        }
        Self { goals, states, targets, mask }
    }

    fn valid(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }
}

/// Two-layer gated recurrent network over projected state and goal vectors.
///
/// State and goal each pass through their own linear map to `embed`
/// features; the concatenation feeds two gated recurrent layers of width
/// `hidden`, followed by `hidden → hidden → width` with a ReLU in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentModel {
    pub mode: TargetMode,
    pub width: usize,
    pub embed: usize,
    pub hidden: usize,
    pub loss: Loss,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecurrentTrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub skipped: usize,
    pub zero_targets: usize,
}

impl RecurrentModel {
    pub fn new(mode: TargetMode, width: usize, cfg: &RecurrentConfig) -> Self {
        let layout = Layout::new(width, cfg.embed, cfg.hidden);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (slot, fan) in layout.init_groups(cfg.hidden) {
            let bound = 1.0 / (fan.max(1) as f64).sqrt();
            for p in &mut params[slot.off..slot.off + slot.len()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Self {
            mode,
            width,
            embed: cfg.embed,
            hidden: cfg.hidden,
            loss: cfg.loss.unwrap_or(Loss::for_mode(mode)),
            params,
        }
    }

    /// Number of parameters for a given width with the default shape.
    pub fn parameter_count_for(width: usize, embed: usize, hidden: usize) -> usize {
        Layout::new(width, embed, hidden).total
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        Layout::new(self.width, self.embed, self.hidden)
    }

    fn gru(&self, lay: &Layout, l: usize, x: &Array2<f64>, h: &Array2<f64>) -> (Array2<f64>, LayerCache) {
        let p = &self.params;
        let hd = self.hidden;
        let gi = affine(x, mat(p, lay.w_ih[l]), vector(p, lay.b_ih[l]));
        let gh = affine(h, mat(p, lay.w_hh[l]), vector(p, lay.b_hh[l]));
        let r = (&gi.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv(sigmoid);
        let z = (&gi.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv(sigmoid);
        let ghn = gh.slice(s![.., 2 * hd..]).to_owned();
        let n = (&gi.slice(s![.., 2 * hd..]) + &(&r * &ghn)).mapv(f64::tanh);
        let h_new = &n + &(&z * &(h - &n));
        (h_new.clone(), LayerCache { h_prev: h.clone(), r, z, n, ghn, h: h_new })
    }

    fn forward_step(
        &self,
        lay: &Layout,
        state: Array2<f64>,
        pg: &Array2<f64>,
        hidden: &mut [Array2<f64>],
    ) -> StepCache {
        let p = &self.params;
        let ps = affine(&state, mat(p, lay.ws), vector(p, lay.bs));
        let x = concatenate(Axis(1), &[ps.view(), pg.view()]).expect("same batch");
        let mut layers = Vec::with_capacity(2);
        let mut input = x.clone();
        for (l, h) in hidden.iter_mut().enumerate() {
            let (h_new, cache) = self.gru(lay, l, &input, h);
            *h = h_new.clone();
            input = h_new;
            layers.push(cache);
        }
        let a1 = affine(&input, mat(p, lay.w1), vector(p, lay.b1));
        let y1 = a1.mapv(|v| v.max(0.0));
        let out = affine(&y1, mat(p, lay.w2), vector(p, lay.b2));
        StepCache { state, x, layers, a1, y1, out }
    }

    fn zero_hidden(&self, b: usize) -> Vec<Array2<f64>> {
        vec![Array2::zeros((b, self.hidden)); 2]
    }

    fn forward(&self, batch: &Batch) -> Vec<StepCache> {
        let lay = self.layout();
        let p = &self.params;
        let pg = affine(&batch.goals, mat(p, lay.wg), vector(p, lay.bg));
        let mut hidden = self.zero_hidden(batch.goals.nrows());
        batch.states.iter().map(|s| self.forward_step(&lay, s.clone(), &pg, &mut hidden)).collect()
    }

    /// Summed loss, its normaliser, gradient w.r.t. each step output, and
    /// the number of valid steps whose target was the zero vector.
    fn loss_terms(&self, batch: &Batch, caches: &[StepCache]) -> (f64, f64, Vec<Array2<f64>>, usize) {
        let valid = batch.valid() as f64;
        let norm = match self.loss {
            Loss::Mse => valid * self.width as f64,
            Loss::Cosine => valid,
        };
        let mut total = 0.0;
        let mut zero_targets = 0;
        let mut douts = Vec::with_capacity(caches.len());
        for (t, c) in caches.iter().enumerate() {
            let mut d = Array2::zeros(c.out.raw_dim());
            for (b, &ok) in batch.mask[t].iter().enumerate() {
                if !ok {
                    continue;
                }
                let y = batch.targets[t].row(b);
                let yh = c.out.row(b);
                match self.loss {
                    Loss::Mse => {
                        for (k, (a, b_)) in yh.iter().zip(y.iter()).enumerate() {
                            let e = a - b_;
                            total += e * e;
                            d[[b, k]] = 2.0 * e / norm;
                        }
                    }
                    Loss::Cosine => {
                        let ny = y.dot(&y).sqrt();
                        if ny == 0.0 {
                            zero_targets += 1;
                            continue;
                        }
                        let nh = yh.dot(&yh).sqrt().max(1e-8);
                        let cos = yh.dot(&y) / (nh * ny);
                        total += 1.0 - cos;
                        for k in 0..self.width {
                            d[[b, k]] = -(y[k] / (nh * ny) - cos * yh[k] / (nh * nh)) / norm;
                        }
                    }
                }
            }
            douts.push(d);
        }
        (total, norm, douts, zero_targets)
    }

    fn backward(&self, batch: &Batch, caches: &[StepCache], douts: &[Array2<f64>]) -> Vec<f64> {
        let lay = self.layout();
        let p = &self.params;
        let e = self.embed;
        let b = batch.goals.nrows();
        let mut grads = vec![0.0; lay.total];
        let mut carry = self.zero_hidden(b);
        let mut dpg = Array2::<f64>::zeros((b, e));
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            let dout = &douts[t];
            acc_outer(&mut grads, lay.w2, dout, &c.y1);
            acc_bias(&mut grads, lay.b2, dout);
            let mut da1 = matmul(dout, mat(p, lay.w2));
            da1.zip_mut_with(&c.a1, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            acc_outer(&mut grads, lay.w1, &da1, &c.layers[1].h);
            acc_bias(&mut grads, lay.b1, &da1);
            let mut dh_in = matmul(&da1, mat(p, lay.w1));
            for l in (0..2).rev() {
                let lc = &c.layers[l];
                let dh = &dh_in + &carry[l];
                let dn = &dh * &lc.z.mapv(|z| 1.0 - z);
                let dz = &dh * &(&lc.h_prev - &lc.n);
                let mut dh_prev = &dh * &lc.z;
                let dan = &dn * &lc.n.mapv(|n| 1.0 - n * n);
                let dr = &dan * &lc.ghn;
                let dghn = &dan * &lc.r;
                let dar = &dr * &lc.r.mapv(|r| r * (1.0 - r));
                let daz = &dz * &lc.z.mapv(|z| z * (1.0 - z));
                let dgi = concatenate(Axis(1), &[dar.view(), daz.view(), dan.view()]).expect("gate blocks");
                let dgh = concatenate(Axis(1), &[dar.view(), daz.view(), dghn.view()]).expect("gate blocks");
                let x_in = if l == 0 { &c.x } else { &c.layers[0].h };
                acc_outer(&mut grads, lay.w_ih[l], &dgi, x_in);
                acc_bias(&mut grads, lay.b_ih[l], &dgi);
                acc_outer(&mut grads, lay.w_hh[l], &dgh, &lc.h_prev);
                acc_bias(&mut grads, lay.b_hh[l], &dgh);
                dh_prev += &matmul(&dgh, mat(p, lay.w_hh[l]));
                carry[l] = dh_prev;
                dh_in = matmul(&dgi, mat(p, lay.w_ih[l]));
            }
            let dps = dh_in.slice(s![.., 0..e]).to_owned();
            dpg += &dh_in.slice(s![.., e..2 * e]);
            acc_outer(&mut grads, lay.ws, &dps, &c.state);
            acc_bias(&mut grads, lay.bs, &dps);
        }
        acc_outer(&mut grads, lay.wg, &dpg, &batch.goals);
        acc_bias(&mut grads, lay.bg, &dpg);
        grads
    }

    fn batch_loss(&self, seqs: &[&EmbeddedTrajectory]) -> (f64, f64) {
        let batch = Batch::new(seqs, self.mode);
        let caches = self.forward(&batch);
        let (sum, norm, _, _) = self.loss_terms(&batch, &caches);
        (sum, norm)
    }

    /// Summed loss and normaliser over `seqs`; the training loss is their
    /// ratio. For the squared-error loss the sum is `Σ_t ‖ŷ_t − y_t‖²`.
    pub fn evaluate(&self, seqs: &[EmbeddedTrajectory]) -> (f64, f64) {
        let seqs: Vec<&EmbeddedTrajectory> = seqs.iter().filter(|s| s.steps() > 0).collect();
        if seqs.is_empty() {
            return (0.0, 0.0);
        }
        seqs.chunks(32).map(|c| self.batch_loss(c)).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
    }

    /// Mean loss and its gradient for one batch.
    pub fn loss_and_gradient(&self, seqs: &[EmbeddedTrajectory]) -> (f64, Vec<f64>) {
        let refs: Vec<&EmbeddedTrajectory> = seqs.iter().collect();
        let (loss, grads, _) = self.loss_and_gradient_refs(&refs);
        (loss, grads)
    }

    fn loss_and_gradient_refs(&self, seqs: &[&EmbeddedTrajectory]) -> (f64, Vec<f64>, usize) {
        let batch = Batch::new(seqs, self.mode);
        let caches = self.forward(&batch);
        let (sum, norm, douts, zeros) = self.loss_terms(&batch, &caches);
        let grads = self.backward(&batch, &caches, &douts);
        (sum / norm, grads, zeros)
    }

    /// Raw outputs for every step of one sequence.
    pub fn sequence_outputs(&self, seq: &EmbeddedTrajectory) -> Vec<Vec<f64>> {
        if seq.steps() == 0 {
            return Vec::new();
        }
        let batch = Batch::new(&[seq], self.mode);
        self.forward(&batch).into_iter().map(|c| c.out.row(0).to_vec()).collect()
    }

    /// Names and sizes of the parameter tensors, in storage order.
    pub fn tensor_ranges(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let l = self.layout();
        let r = |s: Slot| s.off..s.off + s.len();
        vec![
            ("state_proj.weight", r(l.ws)),
            ("state_proj.bias", r(l.bs)),
            ("goal_proj.weight", r(l.wg)),
            ("goal_proj.bias", r(l.bg)),
            ("rnn0.weight_ih", r(l.w_ih[0])),
            ("rnn0.weight_hh", r(l.w_hh[0])),
            ("rnn0.bias_ih", r(l.b_ih[0])),
            ("rnn0.bias_hh", r(l.b_hh[0])),
            ("rnn1.weight_ih", r(l.w_ih[1])),
            ("rnn1.weight_hh", r(l.w_hh[1])),
            ("rnn1.bias_ih", r(l.b_ih[1])),
            ("rnn1.bias_hh", r(l.b_hh[1])),
            ("head1.weight", r(l.w1)),
            ("head1.bias", r(l.b1)),
            ("head2.weight", r(l.w2)),
            ("head2.bias", r(l.b2)),
        ]
    }
}

impl TransitionModel for RecurrentModel {
    fn mode(&self) -> TargetMode {
        self.mode
    }

    fn width(&self) -> usize {
        self.width
    }

    fn initial_memory(&self) -> Memory {
        Memory::Hidden(vec![vec![0.0; self.hidden]; 2])
    }

    fn step(&self, memory: &Memory, state: &[f64], goal: &[f64]) -> (Vec<f64>, Memory) {
        let lay = self.layout();
        let p = &self.params;
        let mut hidden: Vec<Array2<f64>> = match memory {
            Memory::Hidden(h) if h.len() == 2 => {
                h.iter().map(|v| Array2::from_shape_vec((1, self.hidden), v.clone()).expect("hidden width")).collect()
            }
            _ => self.zero_hidden(1),
        };
        let g = Array2::from_shape_vec((1, self.width), goal.to_vec()).expect("goal width");
        let pg = affine(&g, mat(p, lay.wg), vector(p, lay.bg));
        let s = Array2::from_shape_vec((1, self.width), state.to_vec()).expect("state width");
        let c = self.forward_step(&lay, s, &pg, &mut hidden);
        let mem = Memory::Hidden(hidden.into_iter().map(|h| h.into_raw_vec()).collect());
        (c.out.row(0).to_vec(), mem)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grads[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grads[i] * grads[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn clip(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        grads.iter_mut().for_each(|g| *g *= scale);
    }
}

/// Trains on whole trajectories with early stopping on validation loss.
/// When `val` is empty the training loss drives early stopping.
pub fn train_recurrent(
    train: &[EmbeddedTrajectory],
    val: &[EmbeddedTrajectory],
    mode: TargetMode,
    cfg: &RecurrentConfig,
) -> Result<(RecurrentModel, RecurrentTrainReport), ModelError> {
    let mut report = RecurrentTrainReport::default();
    let usable: Vec<&EmbeddedTrajectory> = train
        .iter()
        .filter(|t| {
            if t.steps() == 0 {
                log::warn!("skipping zero-length trajectory");
                report.skipped += 1;
            }
            t.steps() > 0
        })
        .collect();
    let Some(first) = usable.first() else {
        return Err(ModelError::EmptyDataset("training trajectories"));
    };
    let width = first.width();
    for t in usable.iter().chain(val.iter().collect::<Vec<_>>().iter()) {
        if t.width() != width || t.states.iter().any(|s| s.len() != width) {
            return Err(ModelError::DimensionMismatch { expected: width, found: t.width() });
        }
    }
    let mut model = RecurrentModel::new(mode, width, cfg);
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let seqs: Vec<&EmbeddedTrajectory> = chunk.iter().map(|&i| usable[i]).collect();
            let (loss, mut grads, zeros) = model.loss_and_gradient_refs(&seqs);
            if zeros > 0 && epoch == 1 {
                log::warn!("{zeros} zero-vector targets contribute no cosine loss");
                report.zero_targets += zeros;
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                let gnorm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                return Err(ModelError::NonFinite {
                    epoch,
                    detail: format!("loss={loss} grad_norm={gnorm} batch={}", seqs.len()),
                });
            }
            clip(&mut grads, cfg.clip_norm);
            adam.step(&mut model.params, &grads);
            let n: usize = seqs.iter().map(|s| s.steps()).sum();
            sum += loss * n as f64;
            count += n as f64;
        }
        report.train_loss.push(sum / count);
        let v = if val.is_empty() {
            sum / count
        } else {
            let (s, n) = model.evaluate(val);
            if n > 0.0 {
                s / n
            } else {
                sum / count
            }
        };
        report.val_loss.push(v);
        if v < best.0 {
            best = (v, epoch, model.params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    report.best_epoch = best.1;
    if best.1 > 0 {
        model.params = best.2;
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::predict;

    fn toy(width: usize, steps: usize, seed: u64) -> EmbeddedTrajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = (0..=steps).map(|_| (0..width).map(|_| rng.gen_range(0..3) as f64).collect()).collect();
        let goal = (0..width).map(|_| rng.gen_range(0..3) as f64).collect();
        EmbeddedTrajectory { states, goal }
    }

    #[test]
    fn parameter_count_formula() {
        for w in [8, 412, 587, 723] {
            assert_eq!(RecurrentModel::parameter_count_for(w, 32, 256), 321 * w + 707_904);
        }
        let m = RecurrentModel::new(TargetMode::Delta, 587, &RecurrentConfig::default());
        assert_eq!(m.parameter_count(), 896_331);
    }

    #[test]
    fn output_width_is_fixed_for_any_length() {
        let cfg = RecurrentConfig { hidden: 16, embed: 4, ..Default::default() };
        let m = RecurrentModel::new(TargetMode::State, 5, &cfg);
        for len in [1, 2, 7, 50] {
            let outs = m.sequence_outputs(&toy(5, len, len as u64));
            assert_eq!(outs.len(), len);
            assert!(outs.iter().all(|o| o.len() == 5));
        }
    }

    #[test]
    fn stepwise_prediction_matches_sequence_forward() {
        let cfg = RecurrentConfig { hidden: 16, embed: 4, ..Default::default() };
        let m = RecurrentModel::new(TargetMode::Delta, 6, &cfg);
        let seq = toy(6, 5, 1);
        let outs = m.sequence_outputs(&seq);
        let mut mem = m.initial_memory();
        for (state, out) in seq.states.iter().zip(&outs) {
            let (o, next) = m.step(&mem, state, &seq.goal);
            for (a, b) in o.iter().zip(out) {
                assert!((a - b).abs() < 1e-12);
            }
            let (again, _) = m.step(&mem, state, &seq.goal);
            assert_eq!(o, again);
            mem = next;
        }
        let zero = predict(&m, &m.initial_memory(), &seq.states[0], &seq.goal).unwrap().0;
        assert_eq!(zero.len(), 6);
    }

    fn relative_gap(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    fn check_gradients(loss: Loss) {
        let cfg = RecurrentConfig { loss: Some(loss), seed: 11, ..Default::default() };
        let mode = if loss == Loss::Mse { TargetMode::Delta } else { TargetMode::State };
        let mut m = RecurrentModel::new(mode, 8, &cfg);
        let data = vec![toy(8, 3, 1), toy(8, 2, 2)];
        let (_, grads) = m.loss_and_gradient(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let loss_at = |m: &RecurrentModel| {
            let refs: Vec<&EmbeddedTrajectory> = data.iter().collect();
            let (sum, norm) = m.batch_loss(&refs);
            sum / norm
        };
        for (name, range) in m.tensor_ranges() {
            let picks: Vec<usize> = match name {
                "head2.weight" => range.clone().step_by(4).collect(),
                "head2.bias" => range.clone().collect(),
                "head1.weight" | "head1.bias" => (0..64).map(|_| rng.gen_range(range.clone())).collect(),
                _ => (0..8).map(|_| rng.gen_range(range.clone())).collect(),
            };
            for i in picks {
                let orig = m.params[i];
                m.params[i] = orig + eps;
                let up = loss_at(&m);
                m.params[i] = orig - eps;
                let down = loss_at(&m);
                m.params[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                if grads[i].abs().max(numeric.abs()) > 1e-6 {
                    worst = worst.max(relative_gap(grads[i], numeric));
                }
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn squared_error_gradients_match_finite_differences() {
        check_gradients(Loss::Mse);
    }

    #[test]
    fn cosine_gradients_match_finite_differences() {
        check_gradients(Loss::Cosine);
    }

    #[test]
    fn delta_loss_sum_equals_direct_recomputation() {
        let cfg = RecurrentConfig { hidden: 32, embed: 8, seed: 4, ..Default::default() };
        let m = RecurrentModel::new(TargetMode::Delta, 6, &cfg);
        let data = vec![toy(6, 4, 7), toy(6, 6, 8), toy(6, 1, 9)];
        let (sum, norm) = m.evaluate(&data);
        let mut direct = 0.0;
        for seq in &data {
            let mut mem = m.initial_memory();
            for t in 0..seq.steps() {
                let (v, next) = predict(&m, &mem, &seq.states[t], &seq.goal).unwrap();
                direct += v.iter().zip(&seq.states[t + 1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                mem = next;
            }
        }
        assert!((sum - direct).abs() / direct <= 1e-6, "{sum} vs {direct}");
        assert_eq!(norm, (11 * 6) as f64);
    }

    #[test]
    fn zero_length_sequences_are_skipped() {
        let cfg = RecurrentConfig { hidden: 8, embed: 4, max_epochs: 2, ..Default::default() };
        let empty = EmbeddedTrajectory { states: vec![vec![0.0; 3]], goal: vec![0.0; 3] };
        let (_, r) = train_recurrent(&[empty.clone(), toy(3, 2, 1)], &[], TargetMode::Delta, &cfg).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(train_recurrent(&[empty], &[], TargetMode::Delta, &cfg).is_err());
    }

    #[test]
    fn training_is_reproducible_and_round_trips() {
        let cfg = RecurrentConfig { hidden: 16, embed: 4, max_epochs: 5, seed: 9, ..Default::default() };
        let data = vec![toy(4, 3, 1), toy(4, 5, 2)];
        let (a, ra) = train_recurrent(&data, &[], TargetMode::State, &cfg).unwrap();
        let (b, rb) = train_recurrent(&data, &[], TargetMode::State, &cfg).unwrap();
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(a, b);
        let saved = super::super::SavedModel::Recurrent(a.clone());
        let super::super::SavedModel::Recurrent(back) = super::super::SavedModel::from_json(&saved.to_json()).unwrap()
        else {
            panic!()
        };
        assert_eq!(back.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>(), a.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
    }
}
