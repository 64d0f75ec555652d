//! Tape-based reverse-mode differentiation over [`Mat`].
//!
//! A [`Graph`] borrows the [`ParamStore`] and records every operation in
//! execution order. Parameters are referenced, never copied. Frozen
//! parameters and plain inputs do not require gradients, so backward skips
//! every subgraph that cannot reach a trainable parameter or a tracked input.

use std::sync::Arc;

use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, Mat};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// `x * sigmoid(1.702 x)`.
const GELU_K: f64 = 1.702;

enum Value {
    Owned(Mat),
    Shared(Arc<Mat>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Exp(Var),
    QuickGelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRows {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    L2NormRows {
        x: Var,
        norms: Vec<f64>,
    },
    Standardize {
        x: Var,
        std: Vec<f64>,
        floored: Vec<bool>,
    },
    Bce {
        p: Var,
        targets: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

/// Result of a backward pass.
pub struct Backward {
    pub params: Gradients,
    /// Gradients of tracked inputs, in the order they were requested.
    pub tracked: Vec<(Var, Mat)>,
}

/// Bounds applied to probabilities inside [`Graph::bce`].
pub const PROB_CLAMP: f64 = 1e-7;

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Shared(m) => m,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn param_leaf(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].value {
            Value::Param(id) => Some(id),
            _ => None,
        }
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn input_shared(&mut self, m: Arc<Mat>) -> Var {
        self.nodes.push(Node {
            value: Value::Shared(m),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is reported by [`Graph::backward`].
    pub fn input_tracked(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs_grad = self.store.trainable(id);
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ra, _) = self.shape(a);
        let (_, cb) = self.shape(b);
        let mut out = Mat::zeros(ra, cb);
        gemm(self.value(a), false, self.value(b), false, 1.0, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (ra, _) = self.shape(a);
        let (rb, _) = self.shape(b);
        let mut out = Mat::zeros(ra, rb);
        gemm(self.value(a), false, self.value(b), true, 1.0, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width mismatch");
        let r = r.data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Multiplies `a` by the `1 x 1` value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let out = self.value(a).map(|x| x * sv);
        let ng = self.needs(a) || self.needs(s);
        self.push(out, Op::MulScalar(a, s), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn quick_gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(GELU_K * x));
        let ng = self.needs(a);
        self.push(out, Op::QuickGelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 x n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        assert_eq!(g.len(), cols, "layer_norm gamma width");
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. `keep`, when given, is a row-major `rows x cols`
    /// mask; positions with `false` receive exactly zero weight. Every row
    /// must keep at least one position.
    pub fn softmax(&mut self, x: Var, keep: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if let Some(k) = keep {
            assert_eq!(k.len(), rows * cols, "softmax mask shape");
        }
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let kept = |c: usize| keep.is_none_or(|k| k[r * cols + c]);
            let max = (0..cols)
                .filter(|&c| kept(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "softmax row fully masked");
            let mut z = 0.0;
            for c in 0..cols {
                if kept(c) {
                    let e = (row[c] - max).exp();
                    out.set(r, c, e);
                    z += e;
                }
            }
            for v in out.row_mut(r) {
                *v /= z;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let mut out = Mat::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.needs(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let out = self.value(x).select_rows(idx);
        let ng = self.needs(x);
        self.push(
            out,
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let out = self.value(x).mean_rows();
        let ng = self.needs(x);
        self.push(out, Op::MeanRows(x), ng)
    }

    /// Normalizes every row to unit L2 norm. Rows must be nonzero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::L2NormRows { x, norms }, ng)
    }

    /// Row-wise z-score with population standard deviation floored at
    /// `std_floor`.
    pub fn standardize_rows(&mut self, x: Var, std_floor: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = Mat::zeros(rows, cols);
        let mut stds = Vec::with_capacity(rows);
        let mut floored = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64).sqrt();
            let (sd, fl) = if sd < std_floor {
                (std_floor, true)
            } else {
                (sd, false)
            };
            stds.push(sd);
            floored.push(fl);
            for c in 0..cols {
                out.set(r, c, (row[c] - mean) / sd);
            }
        }
        let ng = self.needs(x);
        self.push(
            out,
            Op::Standardize {
                x,
                std: stds,
                floored,
            },
            ng,
        )
    }

    /// Mean binary cross-entropy of probabilities `p` against `targets`
    /// (row-major, same shape). Probabilities are clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.len(), targets.len(), "bce shape mismatch");
        let n = pv.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let ng = self.needs(p);
        self.push(
            Mat::scalar(loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
            ng,
        )
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`; `logits`
    /// is a single row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), 1, "cross_entropy expects one row");
        let max = lv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lv.data().iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let loss = -(lv.data()[target] - max - z.ln());
        let ng = self.needs(logits);
        self.push(
            Mat::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            ng,
        )
    }

    /// Reverse pass from `seeds` (node, upstream gradient). Returns parameter
    /// gradients and the gradients of every node in `tracked`.
    pub fn backward(&self, seeds: &[(Var, Mat)], tracked: &[Var]) -> Backward {
        let mut params = Gradients::new(self.store);
        let tracked = self.backward_into(seeds, tracked, &mut params);
        Backward { params, tracked }
    }

    /// Like [`Graph::backward`], accumulating parameter gradients into
    /// `params` instead of a fresh buffer.
    pub fn backward_into(&self, seeds: &[(Var, Mat)], tracked: &[Var], params: &mut Gradients) -> Vec<(Var, Mat)> {
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        for (v, g) in seeds {
            assert_eq!(self.shape(*v), g.shape(), "seed gradient shape");
            accumulate(&mut grads, *v, g.clone());
        }
        let mut tracked_out: Vec<Option<Mat>> = vec![None; tracked.len()];

        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(pos) = tracked.iter().position(|t| t.0 == i) {
                tracked_out[pos] = Some(g.clone());
            }
            self.backprop_node(i, g, &mut grads, params);
        }

        tracked
            .iter()
            .zip(tracked_out)
            .map(|(&v, g)| {
                let (r, c) = self.shape(v);
                (v, g.unwrap_or_else(|| Mat::zeros(r, c)))
            })
            .collect()
    }

    /// Convenience: backward from a scalar loss with unit seed.
    pub fn backward_scalar(&self, loss: Var) -> Gradients {
        self.backward(&[(loss, Mat::scalar(1.0))], &[]).params
    }

    fn backprop_node(&self, i: usize, g: Mat, grads: &mut [Option<Mat>], params: &mut Gradients) {
        let node = &self.nodes[i];
        let out = match &node.value {
            Value::Owned(m) => m,
            Value::Shared(m) => m,
            Value::Param(id) => {
                params.accumulate_owned(*id, g);
                return;
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let mut ga = Mat::zeros(g.rows(), bv.rows());
                    gemm(&g, false, bv, true, 1.0, 0.0, &mut ga);
                    accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    if let Some(id) = self.param_leaf(*b) {
                        // Weight gradients go straight into the parameter
                        // buffer; no per-graph temporary.
                        gemm(av, true, &g, false, 1.0, 1.0, params.slot_mut(id, av.cols(), g.cols()));
                    } else {
                        let mut gb = Mat::zeros(av.cols(), g.cols());
                        gemm(av, true, &g, false, 1.0, 0.0, &mut gb);
                        accumulate(grads, *b, gb);
                    }
                }
            }
            Op::MatMulBt(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let mut ga = Mat::zeros(g.rows(), bv.cols());
                    gemm(&g, false, bv, false, 1.0, 0.0, &mut ga);
                    accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let mut gb = Mat::zeros(g.cols(), av.cols());
                    gemm(&g, true, av, false, 1.0, 0.0, &mut gb);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
                if self.needs(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*row) {
                    accumulate(grads, *row, g.mean_rows().map(|x| x * g.rows() as f64));
                }
                if self.needs(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item();
                if self.needs(*s) {
                    let av = self.value(*a);
                    let d: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                    accumulate(grads, *s, Mat::scalar(d));
                }
                if self.needs(*a) {
                    accumulate(grads, *a, g.map(|x| x * sv));
                }
            }
            Op::Exp(a) => {
                accumulate(grads, *a, zip_map(&g, out, |g, y| g * y));
            }
            Op::QuickGelu(a) => {
                let xv = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    zip_map(&g, xv, |g, x| {
                        let s = sigmoid(GELU_K * x);
                        g * (s + GELU_K * x * s * (1.0 - s))
                    }),
                );
            }
            Op::Sigmoid(a) => {
                accumulate(grads, *a, zip_map(&g, out, |g, y| g * y * (1.0 - y)));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                let gam = self.value(*gamma);
                if self.needs(*gamma) {
                    let mut gg = Mat::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                        }
                    }
                    accumulate(grads, *gamma, gg);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, g.mean_rows().map(|v| v * rows as f64));
                }
                if self.needs(*x) {
                    let mut gx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..cols {
                            let gh = g.get(r, c) * gam.data()[c];
                            m1 += gh;
                            m2 += gh * xhat.get(r, c);
                        }
                        m1 /= cols as f64;
                        m2 /= cols as f64;
                        for c in 0..cols {
                            let gh = g.get(r, c) * gam.data()[c];
                            gx.set(r, c, inv_std[r] * (gh - m1 - xhat.get(r, c) * m2));
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Softmax(x) => {
                let (rows, cols) = g.shape();
                let mut gx = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        gx.set(r, c, y[c] * (gr[c] - dot));
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Mat::zeros(rows, cols);
                for r in 0..rows {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.needs(p) {
                        let mut gp = Mat::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        accumulate(grads, p, gp);
                    }
                    off += cols;
                }
            }
            Op::SelectRows { x, idx } => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Mat::zeros(rows, cols);
                for (k, &src) in idx.iter().enumerate() {
                    for (a, b) in gx.row_mut(src).iter_mut().zip(g.row(k)) {
                        *a += b;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.needs(p) {
                        let slice = g.data()[off * cols..(off + rows) * cols].to_vec();
                        accumulate(grads, p, Mat::from_vec(rows, cols, slice));
                    }
                    off += rows;
                }
            }
            Op::MeanRows(x) => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Mat::zeros(rows, cols);
                let inv = 1.0 / rows as f64;
                for r in 0..rows {
                    for (a, b) in gx.row_mut(r).iter_mut().zip(g.data()) {
                        *a = b * inv;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::L2NormRows { x, norms } => {
                let (rows, cols) = g.shape();
                let mut gx = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        gx.set(r, c, (gr[c] - y[c] * dot) / norms[r]);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Standardize { x, std, floored } => {
                let (rows, cols) = g.shape();
                let n = cols as f64;
                let mut gx = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let z = out.row(r);
                    let gr = g.row(r);
                    let mg = gr.iter().sum::<f64>() / n;
                    let mgz = if floored[r] {
                        0.0
                    } else {
                        gr.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / n
                    };
                    for c in 0..cols {
                        gx.set(r, c, (gr[c] - mg - z[c] * mgz) / std[r]);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Bce { p, targets } => {
                let pv = self.value(*p);
                let n = pv.len() as f64;
                let up = g.item();
                let data = pv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                            0.0
                        } else {
                            -up * (y / p - (1.0 - y) / (1.0 - p)) / n
                        }
                    })
                    .collect();
                accumulate(grads, *p, Mat::from_vec(pv.rows(), pv.cols(), data));
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let up = g.item();
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| up * (p - if c == *target { 1.0 } else { 0.0 }))
                    .collect();
                accumulate(grads, *logits, Mat::from_vec(1, probs.len(), data));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
