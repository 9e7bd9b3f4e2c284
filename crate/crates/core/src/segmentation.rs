//! Transformer segmentation module.
//!
//! Each layer computes
//!
//! ```text
//! H' = LN(FFN(LN(MHSA(H + P))) + H) + H
//! ```
//!
//! with positional encodings added to the attention input only. A
//! conventional pre-norm layer is available for comparison. The head maps the
//! last hidden state to per-frame class distributions.

use serde::{Deserialize, Serialize};

use crate::attention::{mhsa_graph, AttentionParams};
use crate::autograd::{Graph, Var};
use crate::encoder::TokenSequence;
use crate::error::{shape_err, Error, Result};
use crate::params::{param_rng, param_tree, LayerNormParams};
use crate::tensor::Mat;

/// Which end of the sequence position 0 is attached to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionAnchor {
    Start,
    /// Position 0 is the most recent frame.
    #[default]
    End,
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoid_table(max_len: usize, width: usize) -> Mat {
    let mut t = Mat::zeros(max_len, width);
    for p in 0..max_len {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / width as f64);
            t[(p, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Fixed sinusoidal positional encodings precomputed up to `max_len` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    table: Mat,
    anchor: PositionAnchor,
}

impl PositionalEncoding {
    pub fn new(max_len: usize, width: usize, anchor: PositionAnchor) -> Self {
        PositionalEncoding {
            table: sinusoid_table(max_len, width),
            anchor,
        }
    }

    pub fn max_len(&self) -> usize {
        self.table.rows()
    }

    /// `len × d` encodings for a sequence of `len` tokens.
    pub fn rows(&self, len: usize) -> Result<Mat> {
        if len > self.max_len() {
            return Err(Error::SequenceTooLong {
                len,
                max: self.max_len(),
            });
        }
        Ok(match self.anchor {
            PositionAnchor::Start => self.table.slice_rows(0, len),
            PositionAnchor::End => {
                let idx: Vec<usize> = (0..len).rev().collect();
                self.table.select_rows(&idx)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegLayerParams<T> {
    pub attn: AttentionParams<T>,
    /// `d × d_f`.
    pub w1: T,
    pub b1: T,
    /// `d_f × d`.
    pub w2: T,
    pub b2: T,
    pub ln1: LayerNormParams<T>,
    pub ln2: LayerNormParams<T>,
}

param_tree!(SegLayerParams {
    leaves: [w1, b1, w2, b2],
    nodes: [attn, ln1, ln2],
});

impl SegLayerParams<Mat> {
    pub fn init(width: usize, heads: usize, ffn_width: usize, seed: u64, prefix: &str) -> Self {
        let head_dim = width / heads;
        SegLayerParams {
            attn: AttentionParams::init(width, heads, head_dim, seed, &format!("{prefix}.attn")),
            w1: Mat::glorot(width, ffn_width, &mut param_rng(seed, &format!("{prefix}.w1"))),
            b1: Mat::zeros(1, ffn_width),
            w2: Mat::glorot(ffn_width, width, &mut param_rng(seed, &format!("{prefix}.w2"))),
            b2: Mat::zeros(1, width),
            ln1: LayerNormParams::new(width),
            ln2: LayerNormParams::new(width),
        }
    }

    pub fn width(&self) -> usize {
        self.w1.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationParams<T> {
    pub layers: Vec<SegLayerParams<T>>,
    /// `d × K`.
    pub head_w: T,
    pub head_b: T,
}

param_tree!(SegmentationParams {
    leaves: [head_w, head_b],
    node_vecs: [layers],
});

impl SegmentationParams<Mat> {
    pub fn init(
        width: usize,
        heads: usize,
        ffn_width: usize,
        n_layers: usize,
        n_classes: usize,
        seed: u64,
        prefix: &str,
    ) -> Self {
        SegmentationParams {
            layers: (0..n_layers)
                .map(|l| SegLayerParams::init(width, heads, ffn_width, seed, &format!("{prefix}.layers.{l}")))
                .collect(),
            head_w: Mat::glorot(width, n_classes, &mut param_rng(seed, &format!("{prefix}.head_w"))),
            head_b: Mat::zeros(1, n_classes),
        }
    }
}

/// `σ(X W_1 + b_1) W_2 + b_2` with ReLU as `σ`.
pub fn ffn_graph(g: &mut Graph, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var {
    let z = g.matmul(x, w1);
    let z = g.add_row(z, b1);
    let z = g.relu(z);
    let z = g.matmul(z, w2);
    g.add_row(z, b2)
}

pub fn seg_layer_graph(g: &mut Graph, h: Var, p: &SegLayerParams<Var>, pos: Var, literal: bool) -> Var {
    let attn_in = g.add(h, pos);
    if literal {
        let a = mhsa_graph(g, attn_in, &p.attn);
        let a = p.ln1.apply(g, a);
        let f = ffn_graph(g, a, p.w1, p.b1, p.w2, p.b2);
        let inner = g.add(f, h);
        let inner = p.ln2.apply(g, inner);
        g.add(inner, h)
    } else {
        // pre-norm: H1 = H + MHSA(LN(H + P)), H2 = H1 + FFN(LN(H1))
        let normed = p.ln1.apply(g, attn_in);
        let a = mhsa_graph(g, normed, &p.attn);
        let h1 = g.add(h, a);
        let normed = p.ln2.apply(g, h1);
        let f = ffn_graph(g, normed, p.w1, p.b1, p.w2, p.b2);
        g.add(h1, f)
    }
}

pub fn stack_graph(g: &mut Graph, x: Var, layers: &[SegLayerParams<Var>], pos: Var, literal: bool) -> Var {
    layers
        .iter()
        .fold(x, |h, layer| seg_layer_graph(g, h, layer, pos, literal))
}

pub struct SegOutput {
    pub logits: Var,
    pub probs: Var,
    pub hidden: Var,
}

pub fn segment_graph(g: &mut Graph, x0: Var, p: &SegmentationParams<Var>, pos: Var, literal: bool) -> SegOutput {
    let hidden = stack_graph(g, x0, &p.layers, pos, literal);
    let logits = g.matmul(hidden, p.head_w);
    let logits = g.add_row(logits, p.head_b);
    let probs = g.softmax_rows(logits);
    SegOutput { logits, probs, hidden }
}

fn check_layer(h: &Mat, p: &SegLayerParams<Mat>, pos: &Mat) -> Result<()> {
    if h.cols() != p.width() {
        return Err(shape_err("seg_layer", format!("width {}", p.width()), h.cols()));
    }
    if pos.shape() != h.shape() {
        return Err(shape_err("seg_layer", format!("P of shape {:?}", h.shape()), format!("{:?}", pos.shape())));
    }
    Ok(())
}

/// One layer on plain matrices.
pub fn seg_layer(h: &Mat, p: &SegLayerParams<Mat>, pos: &Mat, literal: bool) -> Result<Mat> {
    check_layer(h, p, pos)?;
    let mut g = Graph::new();
    let hv = g.leaf(h.clone());
    let pv = g.leaf(pos.clone());
    let bound = p.map(&mut |m| g.leaf(m.clone()));
    let out = seg_layer_graph(&mut g, hv, &bound, pv, literal);
    Ok(g.value(out).clone())
}

/// Per-frame class distributions `Ŷ` and the last hidden state `H^(N)`.
pub fn segment(
    x0: &TokenSequence,
    p: &SegmentationParams<Mat>,
    pe: &PositionalEncoding,
    literal: bool,
) -> Result<(Mat, Mat)> {
    let pos = pe.rows(x0.0.rows())?;
    for layer in &p.layers {
        check_layer(&x0.0, layer, &pos)?;
    }
    let mut g = Graph::new();
    let x = g.leaf(x0.0.clone());
    let pv = g.leaf(pos);
    let bound = p.map(&mut |m| g.leaf(m.clone()));
    let out = segment_graph(&mut g, x, &bound, pv, literal);
    Ok((g.value(out.probs).clone(), g.value(out.hidden).clone()))
}
