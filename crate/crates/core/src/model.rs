//! Full anticipation model: encoder, segmentation stack, fine-label
//! generator, fusion layer and query decoder.

use crate::anticipation::{
    anticipation_layer_graph, decode_graph, DecoderOutput, FusionParams, FuturePrediction, QueryDecoderParams,
};
use crate::autograd::{Graph, Var};
use crate::config::{ModelConfig, Variant};
use crate::encoder::{encode, encode_graph, stride_sample, EncoderParams};
use crate::error::{Error, Result};
use crate::finegrained::{fine_embed_graph, fine_forward, FineGeneratorParams};
use crate::params::{assign_named, collect_named, param_tree, NamedTensors};
use crate::segmentation::{segment_graph, PositionalEncoding, SegOutput, SegmentationParams};
use crate::tensor::Mat;

/// Corpus-dependent sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub feature_dim: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
}

impl Dims {
    pub fn of(corpus: &crate::datasets::Corpus) -> Self {
        Dims {
            feature_dim: corpus.feature_dim,
            n_coarse: corpus.n_coarse,
            n_fine: corpus.n_fine,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MainParams<T> {
    pub encoder: EncoderParams<T>,
    pub segmentation: SegmentationParams<T>,
    pub fusion: FusionParams<T>,
    pub decoder: QueryDecoderParams<T>,
}

param_tree!(MainParams {
    nodes: [encoder, segmentation, fusion, decoder],
});

impl MainParams<Mat> {
    pub fn init(cfg: &ModelConfig, dims: Dims, seed: u64) -> Self {
        let d = cfg.width;
        MainParams {
            encoder: EncoderParams::init(dims.feature_dim, d, seed, "main.encoder"),
            segmentation: SegmentationParams::init(
                d,
                cfg.heads,
                cfg.ffn_width(),
                cfg.seg_layers,
                dims.n_coarse,
                seed,
                "main.segmentation",
            ),
            fusion: FusionParams::init(d, cfg.heads, dims.n_coarse, seed, "main.fusion"),
            decoder: QueryDecoderParams::init(
                d,
                cfg.heads,
                cfg.ffn_width(),
                cfg.n_queries,
                dims.n_fine,
                seed,
                "main.decoder",
            ),
        }
    }
}

pub fn init_generator(cfg: &ModelConfig, dims: Dims, seed: u64) -> FineGeneratorParams<Mat> {
    FineGeneratorParams::init(
        dims.feature_dim,
        cfg.width,
        cfg.heads,
        cfg.ffn_width(),
        cfg.gen_layers,
        dims.n_fine,
        seed,
        "generator",
    )
}

/// Graph handles produced by one forward pass of the main model.
pub struct ForwardVars {
    pub seg: SegOutput,
    pub decoder: DecoderOutput,
    pub context: Var,
}

/// Main-model forward pass over encoder tokens `x0`.
///
/// `fine_labels` are the generator's predicted fine labels per sampled frame;
/// they are required iff the variant uses the fine branch. `embed` is the
/// bound fine-label embedding table.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    variant: Variant,
    pe: &PositionalEncoding,
    p: &MainParams<Var>,
    embed: Var,
    x0: Var,
    fine_labels: Option<&[usize]>,
) -> Result<ForwardVars> {
    let (len, width) = g.shape(x0);
    let pos = g.leaf(pe.rows(len)?);
    let seg = segment_graph(g, x0, &p.segmentation, pos, cfg.literal_layer);

    let h_fine = match (variant.uses_fine(), fine_labels) {
        (true, Some(labels)) => {
            if labels.len() != len {
                return Err(Error::LengthMismatch(labels.len(), len));
            }
            fine_embed_graph(g, labels, embed, cfg.pool())
        }
        (true, None) => {
            return Err(Error::InvalidConfig(
                "variant uses fine labels but none were supplied".into(),
            ))
        }
        (false, _) => g.leaf(Mat::zeros(len, width)),
    };

    let h_vidseg = if variant.uses_labels() {
        Some(if cfg.soft_labels {
            g.matmul(seg.probs, p.fusion.label_embed)
        } else {
            let labels = g.value(seg.probs).argmax_rows();
            g.gather_rows(p.fusion.label_embed, &labels)
        })
    } else {
        None
    };

    let context = anticipation_layer_graph(g, seg.hidden, h_fine, h_vidseg, &p.fusion);
    // The queries need to know which tokens are most recent.
    let memory = g.add(context, pos);
    let decoder = decode_graph(g, memory, &p.decoder);
    Ok(ForwardVars { seg, decoder, context })
}

/// What the model predicts for one observed window.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub future: FuturePrediction,
    /// `T_τ × K` coarse distributions over the sampled observed frames.
    pub segmentation: Mat,
    /// Generator argmax per sampled frame, when the fine branch is active.
    pub fine_labels: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: Dims,
    pub variant: Variant,
    pub generator: FineGeneratorParams<Mat>,
    pub main: MainParams<Mat>,
    pe: PositionalEncoding,
}

impl Model {
    pub fn init(config: ModelConfig, dims: Dims, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let pe = PositionalEncoding::new(config.max_len, config.width, config.position_anchor);
        Ok(Model {
            generator: init_generator(&config, dims, seed),
            main: MainParams::init(&config, dims, seed),
            config,
            dims,
            variant,
            pe,
        })
    }

    pub fn positional(&self) -> &PositionalEncoding {
        &self.pe
    }

    pub fn named_tensors(&self) -> NamedTensors {
        collect_named(|f| {
            self.generator.visit("generator", f);
            self.main.visit("main", f);
        })
    }

    pub fn generator_tensors(&self) -> NamedTensors {
        collect_named(|f| self.generator.visit("generator", f))
    }

    pub fn load_generator(&mut self, named: &NamedTensors) -> Result<()> {
        assign_named(named, |f| self.generator.visit_mut("generator", f))
    }

    pub fn load_tensors(&mut self, named: &NamedTensors) -> Result<()> {
        assign_named(named, |f| {
            self.generator.visit_mut("generator", f);
            self.main.visit_mut("main", f);
        })
    }

    /// Generator argmax per sampled frame, using the generator's own encoder.
    pub fn fine_labels(&self, f_tau: &Mat) -> Result<Vec<usize>> {
        let x0 = encode(f_tau, &self.generator.encoder)?;
        let (probs, _) = fine_forward(&x0, &self.generator, &self.pe, self.config.literal_layer)?;
        Ok(probs.argmax_rows())
    }

    pub fn predict(&self, observed: &Mat, horizon: usize) -> Result<Prediction> {
        if horizon == 0 {
            return Err(Error::EmptyHorizon);
        }
        let (f_tau, _) = stride_sample(observed, self.config.stride)?;
        let fine = if self.variant.uses_fine() {
            Some(self.fine_labels(&f_tau)?)
        } else {
            None
        };
        let mut g = Graph::new();
        let bound = self.main.map(&mut |m| g.leaf(m.clone()));
        let embed = g.leaf(self.generator.embed.clone());
        let fv = g.leaf(f_tau);
        let x0 = encode_graph(&mut g, fv, &bound.encoder)?;
        let out = forward_graph(
            &mut g,
            &self.config,
            self.variant,
            &self.pe,
            &bound,
            embed,
            x0,
            fine.as_deref(),
        )?;
        let probs = g.value(out.decoder.action_logits).softmax_rows();
        let durations = g.value(out.decoder.durations).row(0).to_vec();
        Ok(Prediction {
            future: FuturePrediction::from_parts(probs, durations, horizon)?,
            segmentation: g.value(out.seg.probs).clone(),
            fine_labels: fine,
        })
    }

    /// Coarse label per original frame: segmentation of the stride-sampled
    /// video, expanded back by nearest sampled frame.
    pub fn segment_frames(&self, features: &Mat) -> Result<Vec<usize>> {
        let (f_tau, _) = stride_sample(features, self.config.stride)?;
        let x0 = encode(&f_tau, &self.main.encoder)?;
        let (probs, _) = crate::segmentation::segment(&x0, &self.main.segmentation, &self.pe, self.config.literal_layer)?;
        Ok(expand_nearest(&probs.argmax_rows(), features.rows(), self.config.stride))
    }
}

/// Per-frame labels from labels at sampled frames `0, τ, 2τ, …`: frame `f`
/// takes the label of the sampled frame nearest to it.
pub fn expand_nearest(sampled: &[usize], frames: usize, tau: usize) -> Vec<usize> {
    assert!(!sampled.is_empty(), "expand_nearest: no sampled frames");
    let last = sampled.len() - 1;
    (0..frames)
        .map(|f| {
            let j = ((f as f64) / tau as f64).round() as usize;
            sampled[j.min(last)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            width: 8,
            heads: 2,
            ffn_mult: 2,
            seg_layers: 1,
            gen_layers: 1,
            n_queries: 3,
            stride: 2,
            max_len: 64,
            ..ModelConfig::default()
        }
    }

    fn dims() -> Dims {
        Dims {
            feature_dim: 5,
            n_coarse: 3,
            n_fine: 4,
        }
    }

    fn observed() -> Mat {
        Mat::from_vec(12, 5, (0..60).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect())
    }

    #[test]
    fn nearest_expansion() {
        assert_eq!(expand_nearest(&[7, 8, 9], 9, 3), vec![7, 7, 8, 8, 8, 9, 9, 9, 9]);
        assert_eq!(expand_nearest(&[1, 2], 5, 2), vec![1, 2, 2, 2, 2]);
    }

    #[test]
    fn predictions_have_the_contracted_shape() {
        for variant in Variant::ALL {
            let m = Model::init(tiny_config(), dims(), variant, 3).unwrap();
            let p = m.predict(&observed(), 9).unwrap();
            assert_eq!(p.future.expanded.len(), 9);
            assert_eq!(p.segmentation.shape(), (6, 3));
            assert_eq!(p.fine_labels.is_some(), variant.uses_fine());
            assert!((p.future.durations.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_fine_embeddings_match_the_no_multilevel_model_exactly() {
        let mut full = Model::init(tiny_config(), dims(), Variant::Multilevel, 11).unwrap();
        let ablated = Model::init(tiny_config(), dims(), Variant::NoMultilevel, 11).unwrap();
        assert_eq!(full.main, ablated.main);
        full.generator.embed = Mat::zeros(4, 8);
        let a = full.predict(&observed(), 10).unwrap();
        let b = ablated.predict(&observed(), 10).unwrap();
        assert_eq!(a.future, b.future);
        assert_eq!(a.segmentation, b.segmentation);
    }

    #[test]
    fn tensors_round_trip() {
        let a = Model::init(tiny_config(), dims(), Variant::Multilevel, 1).unwrap();
        let mut b = Model::init(tiny_config(), dims(), Variant::Multilevel, 2).unwrap();
        assert_ne!(a, b);
        b.load_tensors(&a.named_tensors()).unwrap();
        assert_eq!(a, b);
    }
}
