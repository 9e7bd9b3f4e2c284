//! Multi-modal anticipation: fuse video tokens with fine-label embeddings,
//! ground them on embedded segmentation labels, and decode the future with a
//! fixed set of learned queries.
//!
//! Each query yields a fine-action distribution (with an extra trailing
//! "none" class for queries that have no segment to predict) and a duration
//! logit. Duration logits are softmax-normalised across queries, and the
//! horizon is cut into consecutive intervals in query order.

use crate::attention::{attend, mhsa_graph, AttentionParams};
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::params::{param_rng, param_tree, LayerNormParams};
use crate::segmentation::ffn_graph;
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    /// `2d × d`; rows `0..d` act on video tokens, rows `d..2d` on fine embeddings.
    pub concat_proj: T,
    pub mhsa: AttentionParams<T>,
    pub mhca: AttentionParams<T>,
    /// `K × d` coarse-label embeddings producing the cross-attention keys/values.
    pub label_embed: T,
    pub ln_fuse: LayerNormParams<T>,
    pub ln_cross: LayerNormParams<T>,
}

param_tree!(FusionParams {
    leaves: [concat_proj, label_embed],
    nodes: [mhsa, mhca, ln_fuse, ln_cross],
});

impl FusionParams<Mat> {
    pub fn init(width: usize, heads: usize, n_coarse: usize, seed: u64, prefix: &str) -> Self {
        let name = |s: &str| format!("{prefix}.{s}");
        let head_dim = width / heads;
        FusionParams {
            concat_proj: Mat::glorot(2 * width, width, &mut param_rng(seed, &name("concat_proj"))),
            mhsa: AttentionParams::init(width, heads, head_dim, seed, &name("mhsa")),
            mhca: AttentionParams::init(width, heads, head_dim, seed, &name("mhca")),
            label_embed: Mat::glorot(n_coarse, width, &mut param_rng(seed, &name("label_embed"))),
            ln_fuse: LayerNormParams::new(width),
            ln_cross: LayerNormParams::new(width),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryDecoderParams<T> {
    /// `n_q × d`.
    pub queries: T,
    pub attn: AttentionParams<T>,
    pub ln1: LayerNormParams<T>,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
    pub ln2: LayerNormParams<T>,
    /// `d × (K_f + 1)`; the last column is the "none" class.
    pub action_w: T,
    pub action_b: T,
    /// `d × 1`. No bias: a shared offset cancels in the softmax across queries.
    pub dur_w: T,
}

param_tree!(QueryDecoderParams {
    leaves: [queries, w1, b1, w2, b2, action_w, action_b, dur_w],
    nodes: [attn, ln1, ln2],
});

impl QueryDecoderParams<Mat> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        width: usize,
        heads: usize,
        ffn_width: usize,
        n_queries: usize,
        n_fine: usize,
        seed: u64,
        prefix: &str,
    ) -> Self {
        let name = |s: &str| format!("{prefix}.{s}");
        let rng = |s: &str| param_rng(seed, &name(s));
        QueryDecoderParams {
            queries: Mat::uniform(n_queries, width, 1.0, &mut rng("queries")),
            attn: AttentionParams::init(width, heads, width / heads, seed, &name("attn")),
            ln1: LayerNormParams::new(width),
            w1: Mat::glorot(width, ffn_width, &mut rng("w1")),
            b1: Mat::zeros(1, ffn_width),
            w2: Mat::glorot(ffn_width, width, &mut rng("w2")),
            b2: Mat::zeros(1, width),
            ln2: LayerNormParams::new(width),
            action_w: Mat::glorot(width, n_fine + 1, &mut rng("action_w")),
            action_b: Mat::zeros(1, n_fine + 1),
            dur_w: Mat::glorot(width, 1, &mut rng("dur_w")),
        }
    }

    pub fn n_queries(&self) -> usize {
        self.queries.rows()
    }

    /// Number of real fine classes (excluding "none").
    pub fn n_fine(&self) -> usize {
        self.action_w.cols() - 1
    }
}

/// `MHSA(Concat(H_video, H_fine) · W_proj)` together with the projection.
pub fn fuse_graph(g: &mut Graph, h_video: Var, h_fine: Var, p: &FusionParams<Var>) -> (Var, Var) {
    let cat = g.concat_cols(&[h_video, h_fine]);
    let proj = g.matmul(cat, p.concat_proj);
    let fused = mhsa_graph(g, proj, &p.mhsa);
    (proj, fused)
}

/// Queries from `h`, keys and values from the embedded segmentation labels.
pub fn cross_attend_graph(g: &mut Graph, h: Var, h_vidseg: Var, mhca: &AttentionParams<Var>) -> Var {
    attend(g, h, h_vidseg, mhca).output
}

/// One anticipation layer: fusion self-attention then label cross-attention,
/// each wrapped in a residual connection and layer norm. With
/// `h_vidseg = None` the cross-attention is skipped.
pub fn anticipation_layer_graph(
    g: &mut Graph,
    h_video: Var,
    h_fine: Var,
    h_vidseg: Option<Var>,
    p: &FusionParams<Var>,
) -> Var {
    let (proj, fused) = fuse_graph(g, h_video, h_fine, p);
    let h1 = g.add(proj, fused);
    let h1 = p.ln_fuse.apply(g, h1);
    match h_vidseg {
        Some(seg) => {
            let c = cross_attend_graph(g, h1, seg, &p.mhca);
            let h2 = g.add(h1, c);
            p.ln_cross.apply(g, h2)
        }
        None => h1,
    }
}

pub struct DecoderOutput {
    /// `n_q × (K_f + 1)`.
    pub action_logits: Var,
    /// `1 × n_q`, a probability vector.
    pub durations: Var,
}

pub fn decode_graph(g: &mut Graph, context: Var, p: &QueryDecoderParams<Var>) -> DecoderOutput {
    let a = attend(g, p.queries, context, &p.attn).output;
    let h = g.add(p.queries, a);
    let h = p.ln1.apply(g, h);
    let f = ffn_graph(g, h, p.w1, p.b1, p.w2, p.b2);
    let h = g.add(h, f);
    let h = p.ln2.apply(g, h);
    let logits = g.matmul(h, p.action_w);
    let action_logits = g.add_row(logits, p.action_b);
    let dur = g.matmul(h, p.dur_w);
    let dur = g.transpose(dur);
    DecoderOutput {
        action_logits,
        durations: g.softmax_rows(dur),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuturePrediction {
    /// Per query, a distribution over `K_f` fine classes plus "none".
    pub action_probs: Mat,
    /// Per query, sums to 1.
    pub durations: Vec<f64>,
    /// Fine label per future frame.
    pub expanded: Vec<usize>,
}

impl FuturePrediction {
    /// Builds a prediction from per-query distributions and duration fractions.
    pub fn from_parts(action_probs: Mat, durations: Vec<f64>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::EmptyHorizon);
        }
        if action_probs.rows() != durations.len() || action_probs.cols() < 2 {
            return Err(shape_err(
                "FuturePrediction",
                format!("{} queries over at least one class plus none", durations.len()),
                format!("{:?}", action_probs.shape()),
            ));
        }
        let n_fine = action_probs.cols() - 1;
        let labels: Vec<usize> = action_probs
            .slice_cols(0, n_fine)
            .argmax_rows();
        let expanded = expand_durations(&durations, &labels, horizon);
        Ok(FuturePrediction {
            action_probs,
            durations,
            expanded,
        })
    }
}

/// Frame `f` of the horizon goes to the first query whose cumulative duration
/// interval `[c_{q−1}·H, c_q·H)` contains it.
pub fn expand_durations(fractions: &[f64], labels: &[usize], horizon: usize) -> Vec<usize> {
    assert_eq!(fractions.len(), labels.len());
    let mut bounds = Vec::with_capacity(fractions.len());
    let mut acc = 0.0;
    for f in fractions {
        acc += f;
        bounds.push(acc * horizon as f64);
    }
    let mut q = 0;
    (0..horizon)
        .map(|frame| {
            while q + 1 < bounds.len() && (frame as f64) >= bounds[q] {
                q += 1;
            }
            labels[q]
        })
        .collect()
}

pub fn decode_future(context: &Mat, dec: &QueryDecoderParams<Mat>, horizon: usize) -> Result<FuturePrediction> {
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    let width = dec.queries.cols();
    if context.cols() != width {
        return Err(shape_err("decode_future", format!("context width {width}"), context.cols()));
    }
    let mut g = Graph::new();
    let ctx = g.leaf(context.clone());
    let bound = dec.map(&mut |m| g.leaf(m.clone()));
    let out = decode_graph(&mut g, ctx, &bound);
    let probs = g.value(out.action_logits).softmax_rows();
    let durations = g.value(out.durations).row(0).to_vec();
    FuturePrediction::from_parts(probs, durations, horizon)
}

/// Per-query training targets: the first `n_q` runs of the future, with
/// durations as fractions of the kept runs, padded with "none" and zero
/// duration.
#[derive(Clone, Debug, PartialEq)]
pub struct AnticipationTarget {
    pub classes: Vec<usize>,
    pub durations: Vec<f64>,
}

impl AnticipationTarget {
    pub fn from_future(future: &[usize], n_queries: usize, n_fine: usize) -> Self {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &l in future {
            match runs.last_mut() {
                Some((label, len)) if *label == l => *len += 1,
                _ => runs.push((l, 1)),
            }
        }
        runs.truncate(n_queries);
        let kept: usize = runs.iter().map(|r| r.1).sum();
        let mut classes: Vec<usize> = runs.iter().map(|r| r.0).collect();
        let mut durations: Vec<f64> = runs.iter().map(|r| r.1 as f64 / kept as f64).collect();
        classes.resize(n_queries, n_fine);
        durations.resize(n_queries, 0.0);
        AnticipationTarget { classes, durations }
    }

    pub fn matched(&self, n_fine: usize) -> usize {
        self.classes.iter().filter(|&&c| c < n_fine).count()
    }
}

/// Mean query cross-entropy plus mean squared duration error.
pub fn anticipation_loss(pred: &FuturePrediction, future: &[usize]) -> Result<f64> {
    let n_q = pred.durations.len();
    let n_fine = pred.action_probs.cols() - 1;
    if let Some(&bad) = future.iter().find(|&&l| l >= n_fine) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: n_fine,
        });
    }
    let target = AnticipationTarget::from_future(future, n_q, n_fine);
    let ce: f64 = target
        .classes
        .iter()
        .enumerate()
        .map(|(q, &c)| -pred.action_probs[(q, c)].ln())
        .sum::<f64>()
        / n_q as f64;
    let mse: f64 = pred
        .durations
        .iter()
        .zip(&target.durations)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n_q as f64;
    Ok(ce + mse)
}

pub fn anticipation_loss_graph(g: &mut Graph, out: &DecoderOutput, target: &AnticipationTarget) -> Var {
    let ce = g.cross_entropy(out.action_logits, &target.classes);
    let dur = Mat::from_vec(1, target.durations.len(), target.durations.clone());
    let mse = g.mse(out.durations, &dur);
    g.add(ce, mse)
}
