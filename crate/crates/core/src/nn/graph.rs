//! Reverse-mode autodiff tape.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every op applied during
//! a forward pass. Parameters are registered once per graph, so both
//! Siamese branches read the same node for a given name. `backward` walks
//! the tape in reverse and returns gradients for every trainable parameter
//! that was used; frozen parameters never get an entry.

use std::collections::HashMap;

use indexmap::IndexMap;

use super::kernels::{conv2d_backward, conv2d_forward, gemm, ConvGeom, MatRef};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::training::losses::{self, CrossCorrelation, Triplet};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; running statistics are
    /// queued for update.
    Train,
    /// Running statistics; every sample is processed independently.
    Eval,
}

/// Gradients keyed by parameter name, in store order.
pub type Gradients = IndexMap<String, Tensor>;

/// New running statistics produced by one normalization layer in training.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub prefix: String,
    pub batch_mean: Vec<f32>,
    /// Unbiased batch variance.
    pub batch_var: Vec<f32>,
}

enum Op {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Relu(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BarlowTwins {
        e1: Var,
        e2: Var,
        lambda: f64,
        cc: Box<CrossCorrelation>,
    },
    InfoNce {
        emb: Var,
        triplets: Vec<Triplet>,
        tau: f64,
    },
    WeightedSum {
        a: Var,
        b: Var,
        wa: f64,
        wb: f64,
    },
    Sum(Var),
    SumSquares(Var),
    Dot {
        x: Var,
        weights: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// f64 value of scalar loss nodes.
    precise: Option<f64>,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    mode: Mode,
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    bn_updates: Vec<BnUpdate>,
    trace_frozen: bool,
}

/// Per-node gradients from [`Graph::backward_from`].
pub struct GradTable(Vec<Option<Tensor>>);

impl GradTable {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            store,
            mode,
            nodes: Vec::new(),
            params: HashMap::new(),
            bn_updates: Vec::new(),
            trace_frozen: false,
        }
    }

    /// A graph that tracks gradients through frozen parameters too; used
    /// for saliency, where gradients w.r.t. activations are needed
    /// regardless of what is being trained.
    pub fn tracing_all(store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            trace_frozen: true,
            ..Self::new(store, mode)
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            precise: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_scalar(&mut self, value: f64, op: Op, requires_grad: bool) -> Var {
        let v = self.push(Tensor::scalar(value as f32), op, requires_grad);
        self.nodes[v.0].precise = Some(value);
        v
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value, at f64 precision for loss nodes.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        n.precise.unwrap_or_else(|| n.value.item() as f64)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (finite-difference checks, saliency).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node for a stored parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let entry = self
            .store
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
        let trainable = self.trace_frozen || !entry.frozen;
        let v = self.push(entry.value.clone(), Op::Param, trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Names of parameters registered on this graph.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        let (n, cin, h, wd) = match *xs {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::ShapeMismatch(format!("conv input must be 4D, got {xs:?}"))),
        };
        let (cout, k) = match *ws {
            [co, ci, k1, k2] if ci == cin && k1 == k2 => (co, k1),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "conv weight {ws:?} does not fit input {xs:?}"
                )))
            }
        };
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::ShapeMismatch(format!("conv kernel {k} too large for {h}x{wd}")));
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            stride,
            pad,
        };
        let (ho, wo) = geom.out_hw();
        let out = conv2d_forward(self.value(x).data(), n, geom, self.value(w).data(), cout);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::new(vec![n, cout, ho, wo], out)?, Op::Conv2d { x, w, geom }, rg))
    }

    /// Normalization over every axis except 1, with `{prefix}.weight` and
    /// `{prefix}.bias` as scale and shift. Eval mode reads
    /// `{prefix}.running_mean` / `{prefix}.running_var`.
    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.weight"))?;
        let beta = self.param(&format!("{prefix}.bias"))?;
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch(format!("batch norm input {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::ShapeMismatch(format!(
                "{prefix} has {} channels, input has {c}",
                self.value(gamma).len()
            )));
        }
        let m = n * inner;
        let xv = self.nodes[x.0].value.data();
        let mut pending = None;
        let (mean, var_pop) = match self.mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::invalid("batch statistics need more than one value per channel"));
                }
                let mut mean = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * inner;
                        for &v in &xv[base..base + inner] {
                            mean[ch] += v as f64;
                        }
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * inner;
                        for &v in &xv[base..base + inner] {
                            let d = v as f64 - mean[ch];
                            sq[ch] += d * d;
                        }
                    }
                }
                let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
                pending = Some(BnUpdate {
                    prefix: prefix.to_string(),
                    batch_mean: mean.iter().map(|&v| v as f32).collect(),
                    batch_var: var.iter().map(|&v| (v * m as f64 / (m - 1) as f64) as f32).collect(),
                });
                (mean, var)
            }
            Mode::Eval => {
                let rm = self.store.tensor(&format!("{prefix}.running_mean"))?;
                let rv = self.store.tensor(&format!("{prefix}.running_var"))?;
                (
                    rm.data().iter().map(|&v| v as f64).collect(),
                    rv.data().iter().map(|&v| v as f64).collect(),
                )
            }
        };
        let inv_std: Vec<f32> = var_pop
            .iter()
            .map(|&v| (1.0 / (v + BN_EPS as f64).sqrt()) as f32)
            .collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0f32; xv.len()];
        let mut out = vec![0.0f32; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * inner;
                let mu = mean[ch] as f32;
                for j in base..base + inner {
                    let h = (xv[j] - mu) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = h * g[ch] + b[ch];
                }
            }
        }
        self.bn_updates.extend(pending);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let batch_stats = self.mode == Mode::Train;
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.max(0.0)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// `[n, c, h, w]` → `[n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, hw) = match *t.shape() {
            [n, c, h, w] => (n, c, h * w),
            _ => return Err(Error::ShapeMismatch(format!("pool input {:?}", t.shape()))),
        };
        let out: Vec<f32> = t
            .data()
            .chunks_exact(hw)
            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::GlobalAvgPool(x), rg))
    }

    /// `x·wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        let (n, din, dout) = match (xs, ws) {
            (&[n, i], &[o, i2]) if i == i2 => (n, i, o),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "linear input {xs:?} does not fit weight {ws:?}"
                )))
            }
        };
        let mut out = vec![0.0f32; n * dout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != dout {
                return Err(Error::ShapeMismatch(format!("bias of {} for {dout} outputs", bv.len())));
            }
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            MatRef::new(self.value(x).data(), n, din),
            MatRef::new(self.value(w).data(), dout, din).t(),
            1.0,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(vec![n, dout], out)?, Op::Linear { x, w, b }, rg))
    }

    /// Redundancy-reduction loss on the cross-correlation of two embedding
    /// batches.
    pub fn barlow_twins(&mut self, e1: Var, e2: Var, lambda: f64) -> Result<Var> {
        let cc = CrossCorrelation::new(self.value(e1), self.value(e2))?;
        let value = losses::barlow_twins_loss(&cc.c, lambda)?;
        let rg = self.rg(e1) || self.rg(e2);
        Ok(self.push_scalar(
            value,
            Op::BarlowTwins {
                e1,
                e2,
                lambda,
                cc: Box::new(cc),
            },
            rg,
        ))
    }

    pub fn info_nce(&mut self, emb: Var, triplets: Vec<Triplet>, tau: f64) -> Result<Var> {
        let value = losses::info_nce_loss(self.value(emb), &triplets, tau)?;
        let rg = self.rg(emb);
        Ok(self.push_scalar(value, Op::InfoNce { emb, triplets, tau }, rg))
    }

    /// `wa·a + wb·b` for scalar nodes.
    pub fn weighted_sum(&mut self, a: Var, b: Var, wa: f64, wb: f64) -> Result<Var> {
        if self.value(a).len() != 1 || self.value(b).len() != 1 {
            return Err(Error::ShapeMismatch("weighted_sum takes scalars".into()));
        }
        let value = wa * self.scalar(a) + wb * self.scalar(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_scalar(value, Op::WeightedSum { a, b, wa, wb }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(x);
        self.push_scalar(value, Op::Sum(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .data()
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum();
        let rg = self.rg(x);
        self.push_scalar(value, Op::SumSquares(x), rg)
    }

    /// `Σ weights ⊙ x`.
    pub fn dot(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        if weights.shape() != self.value(x).shape() {
            return Err(Error::ShapeMismatch("dot weights must match input shape".into()));
        }
        let value = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let rg = self.rg(x);
        Ok(self.push_scalar(value, Op::Dot { x, weights }, rg))
    }

    /// Running-statistic updates queued by training-mode normalization.
    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradients of a scalar loss for every trainable parameter used.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        if !self.scalar(loss).is_finite() || !lv.all_finite() {
            return Err(Error::NonFinite(format!("loss value {}", self.scalar(loss))));
        }
        let table = self.backward_from(loss, Tensor::full(lv.shape(), 1.0), None)?;
        let mut grads = Gradients::new();
        for name in self.store.names() {
            let Some(&v) = self.params.get(name) else {
                continue;
            };
            if !self.rg(v) {
                continue;
            }
            let g = table
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            grads.insert(name.to_string(), g);
        }
        Ok(grads)
    }

    /// Reverse pass from `root` seeded with `seed`. Nodes created before
    /// `stop` are not visited, so their gradients stay unset.
    pub fn backward_from(&self, root: Var, seed: Tensor, stop: Option<Var>) -> Result<GradTable> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::ShapeMismatch("seed must match root shape".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        let lowest = stop.map_or(0, |s| s.0);
        for idx in (lowest..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(GradTable(grads))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let shaped = |v: Var, data: Vec<f32>| Tensor::new(self.value(v).shape().to_vec(), data);
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, geom } => {
                let n = self.value(*x).dim(0);
                let cout = self.value(*w).dim(0);
                let (dx, dw) = conv2d_backward(
                    self.value(*x).data(),
                    n,
                    *geom,
                    self.value(*w).data(),
                    cout,
                    g.data(),
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
                if let Some(dw) = dw {
                    accumulate(&mut grads[w.0], shaped(*w, dw)?);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = self.value(*x).shape();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let m = (n * inner) as f64;
                let gv = self.value(*gamma).data();
                let dy = g.data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * inner;
                        for j in base..base + inner {
                            dgamma[ch] += dy[j] as f64 * xhat[j] as f64;
                            dbeta[ch] += dy[j] as f64;
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0f32; dy.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * inner;
                            let scale = gv[ch] * inv_std[ch];
                            if *batch_stats {
                                // dβ = Σdy and dγ = Σdy·x̂ are the two batch sums.
                                let mean_dy = (dbeta[ch] / m) as f32;
                                let mean_dy_xhat = (dgamma[ch] / m) as f32;
                                for j in base..base + inner {
                                    dx[j] = scale * (dy[j] - mean_dy - xhat[j] * mean_dy_xhat);
                                }
                            } else {
                                for j in base..base + inner {
                                    dx[j] = scale * dy[j];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
                if self.rg(*gamma) {
                    accumulate(&mut grads[gamma.0], shaped(*gamma, dgamma.iter().map(|&v| v as f32).collect())?);
                }
                if self.rg(*beta) {
                    accumulate(&mut grads[beta.0], shaped(*beta, dbeta.iter().map(|&v| v as f32).collect())?);
                }
            }
            Op::Relu(x) => {
                if self.rg(*x) {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.rg(*x) {
                    let s = self.value(*x).shape();
                    let hw = s[2] * s[3];
                    let mut dx = vec![0.0f32; self.value(*x).len()];
                    for (plane, &d) in dx.chunks_exact_mut(hw).zip(g.data()) {
                        plane.fill(d / hw as f32);
                    }
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.value(*x).dim(0), self.value(*x).dim(1));
                let dout = self.value(*w).dim(0);
                let dy = MatRef::new(g.data(), n, dout);
                if self.rg(*x) {
                    let mut dx = vec![0.0f32; n * din];
                    gemm(dy, MatRef::new(self.value(*w).data(), dout, din), 0.0, &mut dx);
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0f32; dout * din];
                    gemm(dy.t(), MatRef::new(self.value(*x).data(), n, din), 0.0, &mut dw);
                    accumulate(&mut grads[w.0], shaped(*w, dw)?);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![0.0f64; dout];
                        for row in g.data().chunks_exact(dout) {
                            for (acc, &v) in db.iter_mut().zip(row) {
                                *acc += v as f64;
                            }
                        }
                        accumulate(&mut grads[b.0], shaped(*b, db.into_iter().map(|v| v as f32).collect())?);
                    }
                }
            }
            Op::BarlowTwins { e1, e2, lambda, cc } => {
                let up = g.item() as f64;
                let mut dc = losses::barlow_twins_grad(&cc.c, *lambda)?;
                dc.iter_mut().for_each(|v| *v *= up);
                let (d1, d2) = cc.backward(&dc);
                if self.rg(*e1) {
                    accumulate(&mut grads[e1.0], shaped(*e1, to_f32(d1))?);
                }
                if self.rg(*e2) {
                    accumulate(&mut grads[e2.0], shaped(*e2, to_f32(d2))?);
                }
            }
            Op::InfoNce { emb, triplets, tau } => {
                let up = g.item() as f64;
                let d = losses::info_nce_grad(self.value(*emb), triplets, *tau)?;
                let d = d.into_iter().map(|v| (v * up) as f32).collect();
                accumulate(&mut grads[emb.0], shaped(*emb, d)?);
            }
            Op::WeightedSum { a, b, wa, wb } => {
                let up = g.item() as f64;
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], Tensor::full(self.value(*a).shape(), (up * wa) as f32));
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], Tensor::full(self.value(*b).shape(), (up * wb) as f32));
                }
            }
            Op::Sum(x) => {
                accumulate(&mut grads[x.0], Tensor::full(self.value(*x).shape(), g.item()));
            }
            Op::SumSquares(x) => {
                let up = g.item();
                let dx = self.value(*x).data().iter().map(|&v| 2.0 * v * up).collect();
                accumulate(&mut grads[x.0], shaped(*x, dx)?);
            }
            Op::Dot { x, weights } => {
                let up = g.item();
                let dx = weights.data().iter().map(|&w| w * up).collect();
                accumulate(&mut grads[x.0], shaped(*x, dx)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    const STEP: f32 = 1e-3;

    fn random(shape: &[usize], seed_value: u64) -> Tensor {
        let mut rng = seed::rng(&[seed_value, 77]);
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let v: f32 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn rel_err(a: &[f32], n: &[f32]) -> f64 {
        let diff = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        let scale = a.iter().chain(n).map(|v| v.abs()).fold(1e-3f32, f32::max);
        (diff / scale) as f64
    }

    /// Worst relative error over every leaf and every named parameter.
    fn gradcheck<F>(store: &ParamStore, mode: Mode, leaves: &[Tensor], params: &[&str], build: F) -> f64
    where
        F: Fn(&mut Graph<'_>, &[Var]) -> Var,
    {
        let eval = |store: &ParamStore, leaves: &[Tensor]| {
            let mut g = Graph::new(store, mode);
            let vars: Vec<Var> = leaves.iter().map(|t| g.input_with_grad(t.clone())).collect();
            let loss = build(&mut g, &vars);
            g.scalar(loss)
        };
        let mut g = Graph::new(store, mode);
        let vars: Vec<Var> = leaves.iter().map(|t| g.input_with_grad(t.clone())).collect();
        let loss = build(&mut g, &vars);
        let table = g.backward_from(loss, Tensor::full(&[], 1.0), None).unwrap();
        let named = g.backward(loss).unwrap();
        let mut worst = 0.0f64;
        for (li, v) in vars.iter().enumerate() {
            let analytic = table.get(*v).unwrap().data().to_vec();
            let mut numeric = vec![0.0; analytic.len()];
            for (k, slot) in numeric.iter_mut().enumerate() {
                let mut plus = leaves.to_vec();
                plus[li].data_mut()[k] += STEP;
                let mut minus = leaves.to_vec();
                minus[li].data_mut()[k] -= STEP;
                *slot = ((eval(store, &plus) - eval(store, &minus)) / (2.0 * STEP as f64)) as f32;
            }
            worst = worst.max(rel_err(&analytic, &numeric));
        }
        for name in params {
            let analytic = named[*name].data().to_vec();
            let mut numeric = vec![0.0; analytic.len()];
            for (k, slot) in numeric.iter_mut().enumerate() {
                let mut plus = store.clone();
                plus.get_mut(name).unwrap().value.data_mut()[k] += STEP;
                let mut minus = store.clone();
                minus.get_mut(name).unwrap().value.data_mut()[k] -= STEP;
                *slot = ((eval(&plus, leaves) - eval(&minus, leaves)) / (2.0 * STEP as f64)) as f32;
            }
            worst = worst.max(rel_err(&analytic, &numeric));
        }
        worst
    }

    fn norm_store(c: usize, seed_value: u64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("bn.weight", random(&[c], seed_value), true).unwrap();
        s.insert("bn.bias", random(&[c], seed_value + 1), true).unwrap();
        s.insert("bn.running_mean", random(&[c], seed_value + 2), true).unwrap();
        let var = Tensor::new(vec![c], random(&[c], seed_value + 3).data().iter().map(|v| v.abs() + 0.5).collect()).unwrap();
        s.insert("bn.running_var", var, true).unwrap();
        s
    }

    #[test]
    fn sum_of_squares_gradient_is_two_w() {
        let mut s = ParamStore::new();
        let w = random(&[3, 2], 1);
        s.insert("w", w.clone(), false).unwrap();
        let mut g = Graph::new(&s, Mode::Train);
        let v = g.param("w").unwrap();
        let l = g.sum_squares(v);
        let grads = g.backward(l).unwrap();
        let expect: Vec<f32> = w.data().iter().map(|x| 2.0 * x).collect();
        assert_eq!(grads["w"].data(), &expect[..]);
    }

    #[test]
    fn frozen_params_get_no_entry_and_are_shared() {
        let mut s = ParamStore::new();
        s.insert("a", random(&[2], 1), false).unwrap();
        s.insert("b", random(&[2], 2), false).unwrap();
        s.freeze_prefix("a");
        let mut g = Graph::new(&s, Mode::Train);
        let a1 = g.param("a").unwrap();
        let a2 = g.param("a").unwrap();
        assert_eq!(a1, a2);
        let b = g.param("b").unwrap();
        let la = g.sum_squares(a1);
        let lb = g.sum_squares(b);
        let l = g.weighted_sum(la, lb, 1.0, 1.0).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(!grads.contains_key("a"));
        assert!(grads.contains_key("b"));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s, Mode::Train);
        let x = g.input_with_grad(Tensor::new(vec![1], vec![f32::INFINITY]).unwrap());
        let l = g.sum(x);
        assert!(matches!(g.backward(l), Err(Error::NonFinite(_))));
    }

    #[test]
    fn conv_gradients() {
        let s = ParamStore::new();
        let err = gradcheck(&s, Mode::Train, &[random(&[2, 2, 5, 6], 1), random(&[3, 2, 3, 3], 2)], &[], |g, v| {
            let y = g.conv2d(v[0], v[1], 2, 1).unwrap();
            g.dot(y, random(&[2, 3, 3, 3], 3)).unwrap()
        });
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn batch_norm_gradients() {
        for mode in [Mode::Train, Mode::Eval] {
            let s = norm_store(3, 10);
            let err = gradcheck(&s, mode, &[random(&[4, 3, 2, 2], 4)], &["bn.weight", "bn.bias"], |g, v| {
                let y = g.batch_norm(v[0], "bn").unwrap();
                g.dot(y, random(&[4, 3, 2, 2], 5)).unwrap()
            });
            assert!(err < 5e-3, "{mode:?} {err}");
            let err = gradcheck(&s, mode, &[random(&[5, 3], 6)], &["bn.weight"], |g, v| {
                let y = g.batch_norm(v[0], "bn").unwrap();
                g.dot(y, random(&[5, 3], 7)).unwrap()
            });
            assert!(err < 5e-3, "{mode:?} 1d {err}");
        }
    }

    #[test]
    fn relu_pool_linear_gradients() {
        let s = ParamStore::new();
        let err = gradcheck(&s, Mode::Train, &[random(&[2, 3, 4, 4], 8)], &[], |g, v| {
            let r = g.relu(v[0]);
            let p = g.global_avg_pool(r).unwrap();
            g.dot(p, random(&[2, 3], 9)).unwrap()
        });
        assert!(err < 5e-3, "{err}");
        let err = gradcheck(
            &s,
            Mode::Train,
            &[random(&[4, 5], 10), random(&[3, 5], 11), random(&[3], 12)],
            &[],
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
                g.dot(y, random(&[4, 3], 13)).unwrap()
            },
        );
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn loss_gradients() {
        let s = ParamStore::new();
        let err = gradcheck(&s, Mode::Train, &[random(&[8, 16], 14), random(&[8, 16], 15)], &[], |g, v| {
            g.barlow_twins(v[0], v[1], 0.0051).unwrap()
        });
        assert!(err < 5e-3, "bt {err}");
        let triplets = vec![
            Triplet { anchor: 0, positive: 1, negative: 2 },
            Triplet { anchor: 3, positive: 4, negative: 0 },
            Triplet { anchor: 5, positive: 6, negative: 7 },
        ];
        let err = gradcheck(&s, Mode::Train, &[random(&[8, 16], 16)], &[], |g, v| {
            g.info_nce(v[0], triplets.clone(), 0.07).unwrap()
        });
        assert!(err < 5e-3, "infonce {err}");
        let err = gradcheck(&s, Mode::Train, &[random(&[3], 17), random(&[2, 2], 18)], &[], |g, v| {
            let a = g.sum_squares(v[0]);
            let b = g.sum(v[1]);
            g.weighted_sum(a, b, 0.3, 0.7).unwrap()
        });
        assert!(err < 5e-3, "weighted {err}");
    }

    #[test]
    fn bn_training_queues_unbiased_stats() {
        let s = norm_store(1, 0);
        let mut g = Graph::new(&s, Mode::Train);
        let x = g.input(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        g.batch_norm(x, "bn").unwrap();
        let u = g.take_bn_updates();
        assert_eq!(u.len(), 1);
        assert_eq!(u[0].batch_mean, vec![2.5]);
        assert!((u[0].batch_var[0] - 5.0 / 3.0).abs() < 1e-6);
    }
}
