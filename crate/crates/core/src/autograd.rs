//! A small reverse-mode tape over [`Mat`].
//!
//! Every forward op appends a node holding its value and whatever it needs for
//! the backward pass. [`Graph::backward`] walks the tape in reverse and returns
//! one gradient per node.

use crate::finegrained::{inter_loss_with_grad, intra_loss_with_grad};
use crate::tensor::Mat;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Mat,
    },
    SquaredError(Var, Mat),
    Sum(Var),
    /// Loss whose gradient w.r.t. its single input was computed in the forward pass.
    Precomputed(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes the loss does not depend on.
pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when the loss ignores `v`.
    pub fn get_or_zeros(&self, v: Var, like: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(like.0, like.1))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        self.push(value, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 × n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: bias shape mismatch");
        let mut value = self.value(a).clone();
        let b = self.value(row).row(0).to_vec();
        for i in 0..r {
            for (x, y) in value.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scaled(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Row-wise layer normalisation with `1 × n` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.shape();
        assert_eq!(self.shape(gamma), (1, c), "layer_norm: scale shape mismatch");
        assert_eq!(self.shape(beta), (1, c), "layer_norm: shift shape mismatch");
        let mut xhat = Mat::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gamma).row(0);
        let b = self.value(beta).row(0);
        let mut value = xhat.clone();
        for i in 0..r {
            for ((o, gg), bb) in value.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row count mismatch");
            for i in 0..rows {
                value.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
            }
            off += pv.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Row lookup, e.g. an embedding table indexed by label ids.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let value = self.value(table).select_rows(idx);
        self.push(value, Op::GatherRows(table, idx.to_vec()))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy: target count mismatch");
        let probs = lv.softmax_rows();
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < lv.cols(), "cross_entropy: target out of range");
            // log-sum-exp form keeps -log p finite for saturated logits
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        self.push(
            Mat::scalar(loss / n),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean squared difference between `a` and a constant target.
    pub fn mse(&mut self, a: Var, target: &Mat) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), target.shape(), "mse: shape mismatch");
        let n = av.len() as f64;
        let loss = av
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push(Mat::scalar(loss), Op::SquaredError(a, target.clone()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Intra-cluster consistency loss over the rows of `x`.
    pub fn intra_loss(&mut self, x: Var, clusters: &[usize]) -> Var {
        let (loss, grad) = intra_loss_with_grad(self.value(x), clusters);
        self.push(Mat::scalar(loss), Op::Precomputed(x, grad))
    }

    /// Inter-cluster separation loss over the rows of `x`.
    pub fn inter_loss(&mut self, x: Var, clusters: &[usize]) -> Var {
        let (loss, grad) = inter_loss_with_grad(self.value(x), clusters);
        self.push(Mat::scalar(loss), Op::Precomputed(x, grad))
    }

    /// Gradients of the scalar `loss` w.r.t. every node on the tape.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Mat| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_nt(self.value(*b)));
                    acc(*b, self.value(*a).matmul_tn(&g));
                }
                Op::MatMulNt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    acc(*a, g.matmul(self.value(*b)));
                    acc(*b, g.matmul_tn(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut db = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*a, g.clone());
                    acc(*row, db);
                }
                Op::Scale(a, s) => acc(*a, g.scaled(*s)),
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |gg, x| if x > 0.0 { gg } else { 0.0 });
                    acc(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yy), gg) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yy * (gg - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (r, c) = xhat.shape();
                    let gm = self.value(*gamma).row(0);
                    let mut dgamma = Mat::zeros(1, c);
                    let mut dbeta = Mat::zeros(1, c);
                    let mut dx = Mat::zeros(r, c);
                    for i in 0..r {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        for j in 0..c {
                            dgamma[(0, j)] += gr[j] * xr[j];
                            dbeta[(0, j)] += gr[j];
                        }
                        let gx: Vec<f64> = gr.iter().zip(gm).map(|(a, b)| a * b).collect();
                        let sum_g: f64 = gx.iter().sum();
                        let sum_gx: f64 = gx.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let n = c as f64;
                        for ((o, gg), xx) in dx.row_mut(i).iter_mut().zip(&gx).zip(xr) {
                            *o = inv_std[i] / n * (n * gg - sum_g - xx * sum_gx);
                        }
                    }
                    acc(*x, dx);
                    acc(*gamma, dgamma);
                    acc(*beta, dbeta);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(p, g.slice_cols(off, off + w));
                        off += w;
                    }
                }
                Op::GatherRows(table, idx) => {
                    let (r, c) = self.shape(*table);
                    let mut d = Mat::zeros(r, c);
                    for (o, &i) in idx.iter().enumerate() {
                        for (a, b) in d.row_mut(i).iter_mut().zip(g.row(o)) {
                            *a += b;
                        }
                    }
                    acc(*table, d);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.item() / targets.len() as f64;
                    let mut d = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        d[(i, t)] -= 1.0;
                    }
                    acc(*logits, d.scaled(scale));
                }
                Op::SquaredError(a, target) => {
                    let n = target.len() as f64;
                    let s = g.item() * 2.0 / n;
                    acc(*a, self.value(*a).zip_map(target, |x, y| s * (x - y)));
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(*a, Mat::filled(r, c, g.item()));
                }
                Op::Precomputed(a, grad) => acc(*a, grad.scaled(g.item())),
            }
            grads[i] = Some(g);
        }
        Gradients(grads)
    }
}
