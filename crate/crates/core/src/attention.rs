//! Multi-head scaled dot-product attention.
//!
//! Self-attention is the special case where queries and keys/values come from
//! the same sequence.

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::params::{param_rng, param_tree};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// Per head, `d × d_h`.
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `(h · d_h) × d`.
    pub o: T,
}

param_tree!(AttentionParams { leaves: [o], leaf_vecs: [q, k, v], });

impl AttentionParams<Mat> {
    pub fn init(width: usize, heads: usize, head_dim: usize, seed: u64, prefix: &str) -> Self {
        let proj = |kind: &str, i: usize| {
            let mut rng = param_rng(seed, &format!("{prefix}.{kind}.{i}"));
            Mat::glorot(width, head_dim, &mut rng)
        };
        let mut rng = param_rng(seed, &format!("{prefix}.o"));
        AttentionParams {
            q: (0..heads).map(|i| proj("q", i)).collect(),
            k: (0..heads).map(|i| proj("k", i)).collect(),
            v: (0..heads).map(|i| proj("v", i)).collect(),
            o: Mat::glorot(heads * head_dim, width, &mut rng),
        }
    }

    pub fn heads(&self) -> usize {
        self.q.len()
    }

    pub fn head_dim(&self) -> usize {
        self.q.first().map_or(0, |m| m.cols())
    }

    fn check(&self, input_width: usize) -> Result<()> {
        let h = self.heads();
        if h == 0 || self.k.len() != h || self.v.len() != h {
            return Err(shape_err("attention", "equal, non-zero head counts", h));
        }
        for m in self.q.iter().chain(&self.k).chain(&self.v) {
            if m.rows() != input_width {
                return Err(shape_err("attention", format!("{input_width} input rows"), m.rows()));
            }
        }
        let dh = self.head_dim();
        if self.o.rows() != h * dh {
            return Err(shape_err("attention", format!("W_o with {} rows", h * dh), self.o.rows()));
        }
        Ok(())
    }
}

/// Attention output and the per-head weight matrices.
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// `Concat_i(Softmax(Q W_i^Q (KV W_i^K)ᵀ / √d_h) · KV W_i^V) · W_o`.
pub fn attend(g: &mut Graph, queries: Var, keys_values: Var, p: &AttentionParams<Var>) -> Attended {
    let head_dim = g.shape(p.q[0]).1;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(p.q.len());
    let mut weights = Vec::with_capacity(p.q.len());
    for i in 0..p.q.len() {
        let q = g.matmul(queries, p.q[i]);
        let k = g.matmul(keys_values, p.k[i]);
        let v = g.matmul(keys_values, p.v[i]);
        let logits = g.matmul_nt(q, k);
        let logits = g.scale(logits, scale);
        let w = g.softmax_rows(logits);
        heads.push(g.matmul(w, v));
        weights.push(w);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
    Attended {
        output: g.matmul(cat, p.o),
        weights,
    }
}

pub fn mhsa_graph(g: &mut Graph, h: Var, p: &AttentionParams<Var>) -> Var {
    attend(g, h, h, p).output
}

/// Multi-head attention on plain matrices; returns the output and per-head
/// attention weights.
pub fn attention(queries: &Mat, keys_values: &Mat, p: &AttentionParams<Mat>) -> Result<(Mat, Vec<Mat>)> {
    p.check(queries.cols())?;
    if keys_values.cols() != queries.cols() {
        return Err(shape_err("attention", format!("{} key columns", queries.cols()), keys_values.cols()));
    }
    let mut g = Graph::new();
    let q = g.leaf(queries.clone());
    let kv = g.leaf(keys_values.clone());
    let bound = p.map(&mut |m| g.leaf(m.clone()));
    let out = attend(&mut g, q, kv, &bound);
    let weights = out.weights.iter().map(|&w| g.value(w).clone()).collect();
    Ok((g.value(out.output).clone(), weights))
}

/// Multi-head self-attention.
pub fn mhsa(h: &Mat, p: &AttentionParams<Mat>) -> Result<Mat> {
    attention(h, h, p).map(|(out, _)| out)
}
