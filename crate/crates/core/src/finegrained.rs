//! Fine-grained label generator and the temporal consistency loss.
//!
//! Frames are grouped into clusters, one per maximal run of the same fine
//! label, so a label that recurs later in the video opens a new cluster. The
//! loss pulls each frame towards its cluster centroid,
//!
//! ```text
//! L_intra = Σ_k Σ_{x ∈ X(k)} ‖x − μ_k‖²
//! ```
//!
//! and pushes centroids apart over ordered pairs,
//!
//! ```text
//! L_inter = Σ_k Σ_{k' ≠ k} 1 / ‖μ_k − μ_k'‖
//! ```
//!
//! combined as `λ1 · L_intra + λ2 · L_inter`. Centroid distances below
//! [`CENTROID_EPS`] are clamped, and each clamp is counted in
//! [`clamp_events`].

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::encoder::{EncoderParams, TokenSequence};
use crate::error::{shape_err, Error, Result};
use crate::params::{param_rng, param_tree};
use crate::segmentation::{stack_graph, PositionalEncoding, SegLayerParams};
use crate::tensor::Mat;

pub const CENTROID_EPS: f64 = 1e-8;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of centroid pairs clamped at [`CENTROID_EPS`] since process start.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// Cluster id per frame; ids are maximal same-label runs numbered from 0 in
/// temporal order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub ids: Vec<usize>,
    pub count: usize,
}

pub fn form_clusters(labels: &[usize]) -> ClusterAssignment {
    let mut ids = Vec::with_capacity(labels.len());
    let mut count = 0;
    for (i, &l) in labels.iter().enumerate() {
        if i == 0 || labels[i - 1] != l {
            count += 1;
        }
        ids.push(count - 1);
    }
    ClusterAssignment { ids, count }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TclWeights {
    pub lambda_intra: f64,
    pub lambda_inter: f64,
}

impl Default for TclWeights {
    fn default() -> Self {
        TclWeights {
            lambda_intra: 1e-4,
            lambda_inter: 0.1,
        }
    }
}

fn centroids(x: &Mat, ids: &[usize]) -> (Mat, Vec<usize>) {
    let k = ids.iter().max().map_or(0, |m| m + 1);
    let mut mu = Mat::zeros(k, x.cols());
    let mut sizes = vec![0usize; k];
    for (i, &c) in ids.iter().enumerate() {
        sizes[c] += 1;
        for (m, v) in mu.row_mut(c).iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for (c, &n) in sizes.iter().enumerate() {
        if n > 0 {
            for m in mu.row_mut(c) {
                *m /= n as f64;
            }
        }
    }
    (mu, sizes)
}

/// Loss and its gradient w.r.t. `x`.
pub fn intra_loss_with_grad(x: &Mat, ids: &[usize]) -> (f64, Mat) {
    assert_eq!(x.rows(), ids.len(), "intra_loss: one cluster id per frame");
    let (mu, _) = centroids(x, ids);
    let mut loss = 0.0;
    let mut grad = Mat::zeros(x.rows(), x.cols());
    for (i, &c) in ids.iter().enumerate() {
        for ((g, xv), m) in grad.row_mut(i).iter_mut().zip(x.row(i)).zip(mu.row(c)) {
            let diff = xv - m;
            loss += diff * diff;
            // the centroid's own dependence on x sums to zero within a cluster
            *g = 2.0 * diff;
        }
    }
    (loss, grad)
}

/// Loss and its gradient w.r.t. `x`.
pub fn inter_loss_with_grad(x: &Mat, ids: &[usize]) -> (f64, Mat) {
    assert_eq!(x.rows(), ids.len(), "inter_loss: one cluster id per frame");
    let (mu, sizes) = centroids(x, ids);
    let k = sizes.len();
    let mut loss = 0.0;
    let mut dmu = Mat::zeros(k, x.cols());
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let diff: Vec<f64> = mu.row(a).iter().zip(mu.row(b)).map(|(p, q)| p - q).collect();
            let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dist < CENTROID_EPS {
                CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
                loss += 1.0 / CENTROID_EPS;
                continue;
            }
            loss += 1.0 / dist;
            // d(1/‖μa − μb‖)/dμa = −(μa − μb)/‖·‖³; the (b, a) term covers μb
            let s = -1.0 / (dist * dist * dist);
            for (d, v) in dmu.row_mut(a).iter_mut().zip(&diff) {
                *d += 2.0 * s * v;
            }
        }
    }
    let mut grad = Mat::zeros(x.rows(), x.cols());
    for (i, &c) in ids.iter().enumerate() {
        let n = sizes[c] as f64;
        for (g, d) in grad.row_mut(i).iter_mut().zip(dmu.row(c)) {
            *g = d / n;
        }
    }
    (loss, grad)
}

pub fn intra_loss(features: &Mat, clusters: &ClusterAssignment) -> f64 {
    intra_loss_with_grad(features, &clusters.ids).0
}

pub fn inter_loss(features: &Mat, clusters: &ClusterAssignment) -> f64 {
    inter_loss_with_grad(features, &clusters.ids).0
}

pub fn tcl_loss(features: &Mat, clusters: &ClusterAssignment, w: TclWeights) -> f64 {
    w.lambda_intra * intra_loss(features, clusters) + w.lambda_inter * inter_loss(features, clusters)
}

/// `λ1 · L_intra + λ2 · L_inter` on the tape. Terms with zero weight are not
/// evaluated.
pub fn tcl_graph(g: &mut Graph, features: Var, clusters: &ClusterAssignment, w: TclWeights) -> Option<Var> {
    let mut total = None;
    if w.lambda_intra != 0.0 {
        let l = g.intra_loss(features, &clusters.ids);
        total = Some(g.scale(l, w.lambda_intra));
    }
    if w.lambda_inter != 0.0 {
        let l = g.inter_loss(features, &clusters.ids);
        let l = g.scale(l, w.lambda_inter);
        total = Some(match total {
            Some(t) => g.add(t, l),
            None => l,
        });
    }
    total
}

/// Mean per-frame cross-entropy of `logits` against `targets`.
pub fn cross_entropy(logits: &Mat, targets: &[usize]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::LengthMismatch(logits.rows(), targets.len()));
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= logits.cols() {
            return Err(Error::LabelOutOfRange {
                label: t,
                classes: logits.cols(),
            });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// `L_ce + L_tcl` with the consistency term evaluated on `features`.
pub fn generator_total_loss(
    logits: &Mat,
    fine_targets: &[usize],
    features: &Mat,
    clusters: &ClusterAssignment,
    w: TclWeights,
) -> Result<f64> {
    if features.rows() != clusters.ids.len() {
        return Err(Error::LengthMismatch(features.rows(), clusters.ids.len()));
    }
    Ok(cross_entropy(logits, fine_targets)? + tcl_loss(features, clusters, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineGeneratorParams<T> {
    pub encoder: EncoderParams<T>,
    pub backbone: Vec<SegLayerParams<T>>,
    /// `d × K_f`.
    pub head_w: T,
    pub head_b: T,
    /// `K_f × d` fine-label embeddings.
    pub embed: T,
}

param_tree!(FineGeneratorParams {
    leaves: [head_w, head_b, embed],
    nodes: [encoder],
    node_vecs: [backbone],
});

impl FineGeneratorParams<Mat> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        feature_dim: usize,
        width: usize,
        heads: usize,
        ffn_width: usize,
        n_layers: usize,
        n_fine: usize,
        seed: u64,
        prefix: &str,
    ) -> Self {
        let name = |s: &str| format!("{prefix}.{s}");
        FineGeneratorParams {
            encoder: EncoderParams::init(feature_dim, width, seed, &name("encoder")),
            backbone: (0..n_layers)
                .map(|l| SegLayerParams::init(width, heads, ffn_width, seed, &name(&format!("backbone.{l}"))))
                .collect(),
            head_w: Mat::glorot(width, n_fine, &mut param_rng(seed, &name("head_w"))),
            head_b: Mat::zeros(1, n_fine),
            embed: Mat::glorot(n_fine, width, &mut param_rng(seed, &name("embed"))),
        }
    }

    pub fn n_fine(&self) -> usize {
        self.head_w.cols()
    }
}

pub struct FineOutput {
    pub logits: Var,
    pub probs: Var,
    pub hidden: Var,
}

/// Backbone and fine head over encoder tokens.
pub fn fine_forward_graph(
    g: &mut Graph,
    x0: Var,
    p: &FineGeneratorParams<Var>,
    pos: Var,
    literal: bool,
) -> FineOutput {
    let hidden = stack_graph(g, x0, &p.backbone, pos, literal);
    let logits = g.matmul(hidden, p.head_w);
    let logits = g.add_row(logits, p.head_b);
    let probs = g.softmax_rows(logits);
    FineOutput { logits, probs, hidden }
}

/// Fine-label distributions and the pre-head hidden features.
pub fn fine_forward(
    x0: &TokenSequence,
    p: &FineGeneratorParams<Mat>,
    pe: &PositionalEncoding,
    literal: bool,
) -> Result<(Mat, Mat)> {
    let width = p.head_w.rows();
    if x0.0.cols() != width {
        return Err(shape_err("fine_forward", format!("width {width}"), x0.0.cols()));
    }
    let pos = pe.rows(x0.0.rows())?;
    let mut g = Graph::new();
    let x = g.leaf(x0.0.clone());
    let pv = g.leaf(pos);
    let bound = p.map(&mut |m| g.leaf(m.clone()));
    let out = fine_forward_graph(&mut g, x, &bound, pv, literal);
    Ok((g.value(out.probs).clone(), g.value(out.hidden).clone()))
}

/// Centred window of `t` positions around `j`, truncated to `[0, len)`.
pub fn pool_window(j: usize, t: usize, len: usize) -> std::ops::Range<usize> {
    let t = t.max(1);
    let before = (t - 1) / 2;
    let after = t - 1 - before;
    j.saturating_sub(before)..(j + after + 1).min(len)
}

/// `len × len` row-stochastic averaging matrix for [`pool_window`].
pub fn pooling_matrix(len: usize, t: usize) -> Mat {
    let mut m = Mat::zeros(len, len);
    for j in 0..len {
        let w = pool_window(j, t, len);
        let n = w.len() as f64;
        for i in w {
            m[(j, i)] = 1.0 / n;
        }
    }
    m
}

/// Each row is the mean embedding of the predicted labels in a centred
/// window of `t` sampled frames.
pub fn fine_embed(labels: &[usize], table: &Mat, t: usize) -> Mat {
    let mut out = Mat::zeros(labels.len(), table.cols());
    for j in 0..labels.len() {
        let w = pool_window(j, t, labels.len());
        let n = w.len() as f64;
        for i in w {
            for (o, e) in out.row_mut(j).iter_mut().zip(table.row(labels[i])) {
                *o += e / n;
            }
        }
    }
    out
}

pub fn fine_embed_graph(g: &mut Graph, labels: &[usize], table: Var, t: usize) -> Var {
    let rows = g.gather_rows(table, labels);
    if t <= 1 {
        return rows;
    }
    let pool = g.leaf(pooling_matrix(labels.len(), t));
    g.matmul(pool, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_are_maximal_runs() {
        assert_eq!(form_clusters(&[0, 0, 0]).ids, vec![0, 0, 0]);
        let c = form_clusters(&[0, 0, 1, 1, 0, 0]);
        assert_eq!(c.ids, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(c.count, 3);
        assert_eq!(form_clusters(&[0, 1, 0, 1]).ids, vec![0, 1, 2, 3]);
        assert_eq!(form_clusters(&[]).count, 0);
    }

    #[test]
    fn intra_examples() {
        let singletons = form_clusters(&[0, 1, 2]);
        let x = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(intra_loss(&x, &singletons), 0.0);

        let x = Mat::from_rows(&[[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(intra_loss(&x, &form_clusters(&[4, 4])), 2.0);
    }

    #[test]
    fn duplicating_members_doubles_intra() {
        let x = Mat::from_rows(&[[0.3, -1.0], [1.2, 0.4], [2.0, 2.0], [-0.5, 0.1]]);
        let labels = [0, 0, 1, 1];
        let dup = Mat::from_rows(&[
            x.row(0), x.row(0), x.row(1), x.row(1), x.row(2), x.row(2), x.row(3), x.row(3),
        ]);
        let dup_labels = [0, 0, 0, 0, 1, 1, 1, 1];
        let a = intra_loss(&x, &form_clusters(&labels));
        let b = intra_loss(&dup, &form_clusters(&dup_labels));
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn inter_examples() {
        let x = Mat::from_rows(&[[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]]);
        let c = form_clusters(&[0, 0, 1]);
        assert_eq!(inter_loss(&x, &c), 1.0);
        assert_eq!(inter_loss(&x, &form_clusters(&[3, 3, 3])), 0.0);
    }

    #[test]
    fn coincident_centroids_are_clamped() {
        let before = clamp_events();
        let x = Mat::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let c = form_clusters(&[0, 1]);
        let (loss, grad) = inter_loss_with_grad(&x, &c.ids);
        assert_eq!(loss, 2.0 / CENTROID_EPS);
        assert_eq!(grad, Mat::zeros(2, 2));
        assert!(clamp_events() >= before + 2);
    }

    #[test]
    fn tcl_combines_weights() {
        let x = Mat::from_rows(&[[0.0, 0.0], [2.0, 0.0], [5.0, 1.0]]);
        let c = form_clusters(&[0, 0, 1]);
        let intra = intra_loss(&x, &c);
        let inter = inter_loss(&x, &c);
        let w = |a, b| TclWeights {
            lambda_intra: a,
            lambda_inter: b,
        };
        assert_eq!(tcl_loss(&x, &c, w(1.0, 0.0)), intra);
        assert_eq!(tcl_loss(&x, &c, w(0.0, 1.0)), inter);
        assert_eq!(tcl_loss(&x, &c, w(0.5, 2.0)), 0.5 * intra + 2.0 * inter);
    }

    #[test]
    fn two_cluster_composition() {
        // centroids (1,0) and (3,0): intra 2, inter 2·(1/2)
        let x = Mat::from_rows(&[[0.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let c = form_clusters(&[0, 0, 1]);
        let w = TclWeights {
            lambda_intra: 0.5,
            lambda_inter: 2.0,
        };
        assert_eq!(tcl_loss(&x, &c, w), 0.5 * 2.0 + 2.0 * 1.0);
    }

    #[test]
    fn total_loss_edge_cases() {
        let w = TclWeights {
            lambda_intra: 1.0,
            lambda_inter: 0.0,
        };
        let logits = Mat::from_rows(&[[50.0, -50.0], [-50.0, 50.0]]);
        let x = Mat::from_rows(&[[1.0], [2.0]]);
        let c = form_clusters(&[0, 1]);
        let total = generator_total_loss(&logits, &[0, 1], &x, &c, w).unwrap();
        assert!(total.abs() < 1e-30, "{total}");

        let uniform = Mat::zeros(2, 5);
        let ce = generator_total_loss(&uniform, &[3, 4], &x, &c, w).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-15);

        assert!(matches!(
            generator_total_loss(&uniform, &[5, 0], &x, &c, w),
            Err(Error::LabelOutOfRange { label: 5, .. })
        ));
    }

    #[test]
    fn pooled_embeddings() {
        let table = Mat::from_rows(&[[1.0, 0.0], [0.0, 3.0]]);
        let labels = [0, 0, 1];
        assert_eq!(fine_embed(&labels, &table, 1), table.select_rows(&labels));
        let pooled = fine_embed(&labels, &table, 3);
        assert_eq!(pooled.row(1), &[2.0 / 3.0, 1.0]);
        assert_eq!(pooled.row(0), &[1.0, 0.0]);
        let constant = fine_embed(&[1, 1, 1, 1], &table, 2);
        for r in 0..4 {
            assert_eq!(constant.row(r), table.row(1));
        }
    }

    #[test]
    fn pooled_embedding_graph_matches_direct() {
        let table = Mat::from_rows(&[[1.0, -2.0], [0.5, 3.0], [0.25, 0.0]]);
        let labels = [2, 0, 0, 1, 2, 1];
        for t in 1..5 {
            let mut g = Graph::new();
            let tv = g.leaf(table.clone());
            let out = fine_embed_graph(&mut g, &labels, tv, t);
            let direct = fine_embed(&labels, &table, t);
            for (a, b) in g.value(out).data().iter().zip(direct.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
