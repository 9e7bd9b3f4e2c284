//! Video encoder: stride sampling followed by a rectified linear map.

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::params::{param_rng, param_tree};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    /// `C × D`.
    pub w: T,
}

param_tree!(EncoderParams { leaves: [w], });

impl EncoderParams<Mat> {
    pub fn init(feature_dim: usize, width: usize, seed: u64, prefix: &str) -> Self {
        let mut rng = param_rng(seed, &format!("{prefix}.w"));
        EncoderParams {
            w: Mat::glorot(feature_dim, width, &mut rng),
        }
    }
}

/// Encoder output `X_0`, `T_τ × D`, non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence(pub Mat);

/// Rows `0, τ, 2τ, …, (⌊T/τ⌋ − 1)·τ` of `features` and their frame indices.
pub fn stride_sample(features: &Mat, tau: usize) -> Result<(Mat, Vec<usize>)> {
    if tau == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    let frames = features.rows();
    if frames < tau {
        return Err(Error::VideoShorterThanStride { frames, stride: tau });
    }
    let kept: Vec<usize> = (0..frames / tau).map(|j| j * tau).collect();
    Ok((features.select_rows(&kept), kept))
}

/// Frame indices kept by [`stride_sample`] for a video of `frames` frames.
pub fn sampled_indices(frames: usize, tau: usize) -> Vec<usize> {
    (0..frames / tau.max(1)).map(|j| j * tau).collect()
}

/// `ReLU(F_τ W)` on the tape.
pub fn encode_graph(g: &mut Graph, f_tau: Var, params: &EncoderParams<Var>) -> Result<Var> {
    let (_, c) = g.shape(f_tau);
    let (wr, _) = g.shape(params.w);
    if c != wr {
        return Err(shape_err("encode", format!("{wr} feature columns"), c));
    }
    let z = g.matmul(f_tau, params.w);
    Ok(g.relu(z))
}

pub fn encode(f_tau: &Mat, params: &EncoderParams<Mat>) -> Result<TokenSequence> {
    if f_tau.cols() != params.w.rows() {
        return Err(shape_err(
            "encode",
            format!("{} feature columns", params.w.rows()),
            f_tau.cols(),
        ));
    }
    Ok(TokenSequence(f_tau.matmul(&params.w).map(|x| x.max(0.0))))
}
