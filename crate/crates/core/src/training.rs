//! Two-stage training: fine-label generator first, then the segmentation and
//! anticipation model on top of the frozen generator. A joint mode trains
//! everything together with a shared encoder.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anticipation::{anticipation_loss_graph, AnticipationTarget};
use crate::autograd::{Graph, Var};
use crate::config::{Config, Stage, TrainConfig};
use crate::datasets::{make_sample, AnticipationSample, Corpus, Video};
use crate::encoder::{encode_graph, stride_sample};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{sample_moc, segmentation_accuracy};
use crate::finegrained::{
    fine_forward_graph, form_clusters, inter_loss, intra_loss, tcl_graph, FineGeneratorParams,
};
use crate::model::{forward_graph, Dims, Model};
use crate::optim::AdamW;
use crate::params::{grad_of, write_checkpoint};
use crate::tensor::Mat;

/// Observation and prediction rates of the held-out check run after every
/// main-stage epoch.
pub const HELD_OUT_ALPHA: f64 = 0.2;
pub const HELD_OUT_BETA: f64 = 0.5;

/// Learning rate at a (fractional) epoch: linear warmup to the peak, then
/// cosine annealing to zero at `epochs`.
pub fn lr_schedule(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs as f64;
    if !(0.0..total).contains(&epoch) {
        return Err(Error::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    let warm = cfg.warmup_epochs as f64;
    if epoch < warm {
        return Ok(cfg.lr_peak * epoch / warm);
    }
    let progress = (epoch - warm) / (total - warm);
    Ok(cfg.lr_peak * 0.5 * (1.0 + (PI * progress).cos()))
}

/// One row of `metrics.csv`. Loss columns are means over the epoch's samples;
/// columns a stage does not produce are left empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: Option<f64>,
    pub loss_intra: Option<f64>,
    pub loss_inter: Option<f64>,
    pub loss_seg: Option<f64>,
    pub loss_ant: Option<f64>,
    pub held_out_seg_acc: Option<f64>,
    pub held_out_moc: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Parts {
    total: f64,
    ce: f64,
    intra: f64,
    inter: f64,
    seg: f64,
    ant: f64,
}

impl Parts {
    fn add(&mut self, o: &Parts) {
        self.total += o.total;
        self.ce += o.ce;
        self.intra += o.intra;
        self.inter += o.inter;
        self.seg += o.seg;
        self.ant += o.ant;
    }

    fn scaled(&self, s: f64) -> Parts {
        Parts {
            total: self.total * s,
            ce: self.ce * s,
            intra: self.intra * s,
            inter: self.inter * s,
            seg: self.seg * s,
            ant: self.ant * s,
        }
    }
}

struct SampleGrads {
    parts: Parts,
    grads: Vec<Mat>,
}

fn check_finite(parts: &Parts, epoch: usize) -> Result<()> {
    for (what, v) in [
        ("total loss", parts.total),
        ("cross-entropy", parts.ce),
        ("intra-cluster loss", parts.intra),
        ("inter-cluster loss", parts.inter),
        ("segmentation loss", parts.seg),
        ("anticipation loss", parts.ant),
    ] {
        if !v.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: what.to_string(),
            });
        }
    }
    Ok(())
}

fn sum_grads(per_sample: Vec<SampleGrads>) -> (Parts, Vec<Mat>, usize) {
    let n = per_sample.len();
    let mut parts = Parts::default();
    let mut total: Option<Vec<Mat>> = None;
    for s in per_sample {
        parts.add(&s.parts);
        match &mut total {
            None => total = Some(s.grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&s.grads) {
                    a.add_assign(g);
                }
            }
        }
    }
    let mean = 1.0 / n.max(1) as f64;
    let grads = total.unwrap_or_default().into_iter().map(|g| g.scaled(mean)).collect();
    (parts, grads, n)
}

fn grads_in_order(g: &Graph, grads: &crate::autograd::Gradients, visit: impl FnOnce(&mut dyn FnMut(String, &Var))) -> Vec<Mat> {
    let mut out = Vec::new();
    visit(&mut |_, v| out.push(grad_of(g, grads, *v)));
    out
}

/// Generator loss on one whole video: fine cross-entropy plus the weighted
/// consistency loss on the backbone features.
fn generator_sample(model: &Model, video: &Video) -> Result<SampleGrads> {
    let tau = model.config.stride;
    let (f_tau, idx) = stride_sample(&video.features.values, tau)?;
    let fine_all = video.labels.fine_per_frame();
    let targets: Vec<usize> = idx.iter().map(|&i| fine_all[i]).collect();
    let clusters = form_clusters(&targets);

    let mut g = Graph::new();
    let p = model.generator.map(&mut |m| g.leaf(m.clone()));
    let fv = g.leaf(f_tau);
    let x0 = encode_graph(&mut g, fv, &p.encoder)?;
    let pos = g.leaf(model.positional().rows(x0_len(&g, x0))?);
    let out = fine_forward_graph(&mut g, x0, &p, pos, model.config.literal_layer);
    let ce = g.cross_entropy(out.logits, &targets);
    let loss = match tcl_graph(&mut g, out.hidden, &clusters, model.config.tcl) {
        Some(t) => g.add(ce, t),
        None => ce,
    };
    let hidden = g.value(out.hidden);
    let parts = Parts {
        total: g.value(loss).item(),
        ce: g.value(ce).item(),
        intra: intra_loss(hidden, &clusters),
        inter: inter_loss(hidden, &clusters),
        ..Parts::default()
    };
    let grads = g.backward(loss);
    Ok(SampleGrads {
        parts,
        grads: grads_in_order(&g, &grads, |f| p.visit("", f)),
    })
}

fn x0_len(g: &Graph, x0: Var) -> usize {
    g.shape(x0).0
}

/// Main-stage loss on one observed window: coarse segmentation
/// cross-entropy plus the anticipation loss. In joint mode the generator's
/// losses are added and its parameters are trained too.
fn main_sample(model: &Model, sample: &AnticipationSample, joint: bool) -> Result<SampleGrads> {
    let cfg = &model.config;
    let (f_tau, idx) = stride_sample(&sample.observed.values, cfg.stride)?;
    let coarse_all = sample.observed_labels.coarse_per_frame();
    let coarse: Vec<usize> = idx.iter().map(|&i| coarse_all[i]).collect();
    let target = AnticipationTarget::from_future(&sample.future_labels, cfg.n_queries, model.dims.n_fine);
    let uses_fine = model.variant.uses_fine();

    let mut g = Graph::new();
    let p = model.main.map(&mut |m| g.leaf(m.clone()));
    let fv = g.leaf(f_tau.clone());
    let x0 = encode_graph(&mut g, fv, &p.encoder)?;
    let mut parts = Parts::default();
    let mut extra: Option<Var> = None;

    // Joint mode binds the whole generator; otherwise only its embedding
    // table is trainable and its labels come from the frozen copy.
    let gen_bound: Option<FineGeneratorParams<Var>>;
    let embed;
    let fine_labels = if joint {
        let gp = model.generator.map(&mut |m| g.leaf(m.clone()));
        embed = gp.embed;
        let labels = if uses_fine {
            let fine_all = sample.observed_labels.fine_per_frame();
            let targets: Vec<usize> = idx.iter().map(|&i| fine_all[i]).collect();
            let clusters = form_clusters(&targets);
            let pos = g.leaf(model.positional().rows(idx.len())?);
            let out = fine_forward_graph(&mut g, x0, &gp, pos, cfg.literal_layer);
            let ce = g.cross_entropy(out.logits, &targets);
            let mut l = ce;
            if let Some(t) = tcl_graph(&mut g, out.hidden, &clusters, cfg.tcl) {
                l = g.add(l, t);
            }
            let hidden = g.value(out.hidden);
            parts.ce = g.value(ce).item();
            parts.intra = intra_loss(hidden, &clusters);
            parts.inter = inter_loss(hidden, &clusters);
            extra = Some(l);
            Some(g.value(out.probs).argmax_rows())
        } else {
            None
        };
        gen_bound = Some(gp);
        labels
    } else {
        embed = g.leaf(model.generator.embed.clone());
        gen_bound = None;
        if uses_fine {
            Some(model.fine_labels(&f_tau)?)
        } else {
            None
        }
    };

    let out = forward_graph(&mut g, cfg, model.variant, model.positional(), &p, embed, x0, fine_labels.as_deref())?;
    let seg = g.cross_entropy(out.seg.logits, &coarse);
    let ant = anticipation_loss_graph(&mut g, &out.decoder, &target);
    let mut loss = g.add(seg, ant);
    if let Some(l) = extra {
        loss = g.add(loss, l);
    }
    parts.seg = g.value(seg).item();
    parts.ant = g.value(ant).item();
    parts.total = g.value(loss).item();

    let grads = g.backward(loss);
    let mut flat = grads_in_order(&g, &grads, |f| p.visit("", f));
    match &gen_bound {
        Some(gp) => flat.extend(grads_in_order(&g, &grads, |f| gp.visit("", f))),
        None => flat.push(grad_of(&g, &grads, embed)),
    }
    Ok(SampleGrads { parts, grads: flat })
}

fn apply_generator(opt: &mut AdamW, model: &mut Model, grads: &[Mat], lr: f64) {
    opt.begin_step();
    let mut i = 0;
    model.generator.visit_mut("generator", &mut |name, m| {
        opt.update(&name, m, &grads[i], lr);
        i += 1;
    });
}

fn apply_main(opt: &mut AdamW, model: &mut Model, grads: &[Mat], lr: f64, joint: bool) {
    opt.begin_step();
    let mut i = 0;
    model.main.visit_mut("main", &mut |name, m| {
        opt.update(&name, m, &grads[i], lr);
        i += 1;
    });
    if joint {
        model.generator.visit_mut("generator", &mut |name, m| {
            opt.update(&name, m, &grads[i], lr);
            i += 1;
        });
    } else {
        opt.update("generator.embed", &mut model.generator.embed, &grads[i], lr);
    }
}

fn draw_alpha(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> f64 {
    let set = &cfg.alpha_train;
    if cfg.alpha_continuous {
        let lo = set.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            return rng.random_range(lo..hi);
        }
        return lo;
    }
    set[rng.random_range(0..set.len())]
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn record(stage: &str, epoch: usize, lr: f64, parts: Parts) -> EpochRecord {
    EpochRecord {
        stage: stage.to_string(),
        epoch,
        lr,
        loss_total: parts.total,
        ..EpochRecord::default()
    }
}

/// Trains `model.generator` on the given videos. Returns one record per epoch.
pub fn train_generator(model: &mut Model, corpus: &Corpus, train: &[usize], cfg: &TrainConfig, seed: u64) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = stage_rng(seed, 1);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut order: Vec<usize> = (0..cfg.passes_per_epoch).flat_map(|_| train.iter().copied()).collect();
    let n_batches = order.len().div_ceil(cfg.batch_size);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = Parts::default();
        let mut count = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let lr = lr_schedule(epoch as f64 + b as f64 / n_batches as f64, cfg)?;
            let m: &Model = model;
            let per: Vec<SampleGrads> = batch
                .par_iter()
                .map(|&i| generator_sample(m, &corpus.videos[i]))
                .collect::<Result<_>>()?;
            let (parts, grads, n) = sum_grads(per);
            check_finite(&parts, epoch)?;
            sum.add(&parts);
            count += n;
            apply_generator(&mut opt, model, &grads, lr);
        }
        let mean = sum.scaled(1.0 / count as f64);
        let mut r = record("generator", epoch, lr_schedule(epoch as f64, cfg)?, mean);
        r.loss_ce = Some(mean.ce);
        r.loss_intra = Some(mean.intra);
        r.loss_inter = Some(mean.inter);
        trace.push(r);
    }
    Ok(trace)
}

/// Trains the main model (and, when `joint`, the generator) on windows of
/// the training videos; reports held-out accuracy after every epoch.
pub fn train_main(
    model: &mut Model,
    corpus: &Corpus,
    train: &[usize],
    held_out: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    joint: bool,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = stage_rng(seed, 2);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut order: Vec<usize> = (0..cfg.passes_per_epoch).flat_map(|_| train.iter().copied()).collect();
    let n_batches = order.len().div_ceil(cfg.batch_size);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = Parts::default();
        let mut count = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let alpha = draw_alpha(cfg, &mut rng);
            let samples: Vec<AnticipationSample> = batch
                .iter()
                .filter_map(|&i| make_sample(corpus, i, alpha, cfg.beta_train))
                .collect();
            if samples.is_empty() {
                continue;
            }
            let lr = lr_schedule(epoch as f64 + b as f64 / n_batches as f64, cfg)?;
            let m: &Model = model;
            let per: Vec<SampleGrads> = samples
                .par_iter()
                .map(|s| main_sample(m, s, joint))
                .collect::<Result<_>>()?;
            let (parts, grads, n) = sum_grads(per);
            check_finite(&parts, epoch)?;
            sum.add(&parts);
            count += n;
            apply_main(&mut opt, model, &grads, lr, joint);
        }
        if joint {
            model.generator.encoder = model.main.encoder.clone();
        }
        let mean = sum.scaled(1.0 / count.max(1) as f64);
        let mut r = record(if joint { "joint" } else { "main" }, epoch, lr_schedule(epoch as f64, cfg)?, mean);
        r.loss_seg = Some(mean.seg);
        r.loss_ant = Some(mean.ant);
        if joint && model.variant.uses_fine() {
            r.loss_ce = Some(mean.ce);
            r.loss_intra = Some(mean.intra);
            r.loss_inter = Some(mean.inter);
        }
        if !held_out.is_empty() {
            let held = corpus.subset(held_out);
            r.held_out_seg_acc = Some(segmentation_accuracy(model, &held)?);
            r.held_out_moc = Some(held_out_moc(model, &held)?);
        }
        trace.push(r);
    }
    Ok(trace)
}

/// Mean per-video MoC at the held-out rates.
pub fn held_out_moc(model: &Model, held: &Corpus) -> Result<f64> {
    let samples: Vec<_> = (0..held.len())
        .filter_map(|i| make_sample(held, i, HELD_OUT_ALPHA, HELD_OUT_BETA))
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mocs: Vec<f64> = samples.par_iter().map(|s| sample_moc(model, s)).collect::<Result<_>>()?;
    Ok(mocs.iter().sum::<f64>() / mocs.len() as f64)
}

/// Everything one training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub seed: u64,
    pub train_videos: Vec<usize>,
    pub held_out_videos: Vec<usize>,
    pub trace: Vec<EpochRecord>,
}

/// Trains one seed end to end, in memory.
pub fn train(corpus: &Corpus, cfg: &Config, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let t = &cfg.train;
    let (train_idx, held_idx) = corpus.split_indices(t.held_out_fraction, t.split_seed);
    let mut model = Model::init(cfg.model.clone(), Dims::of(corpus), t.variant, seed)?;
    let mut trace = Vec::new();
    match t.stage {
        Stage::Generator => {
            trace.extend(train_generator(&mut model, corpus, &train_idx, t, seed)?);
        }
        Stage::Main => {
            if t.variant.uses_fine() {
                trace.extend(train_generator(&mut model, corpus, &train_idx, t, seed)?);
            }
            trace.extend(train_main(&mut model, corpus, &train_idx, &held_idx, t, seed, false)?);
        }
        Stage::Joint => {
            trace.extend(train_main(&mut model, corpus, &train_idx, &held_idx, t, seed, true)?);
        }
    }
    Ok(TrainOutcome {
        model,
        seed,
        train_videos: train_idx,
        held_out_videos: held_idx,
        trace,
    })
}

/// Directory of one seed's run inside a run root.
pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

pub fn checkpoint_path(seed_run: &Path, stage: &str, epoch: usize) -> PathBuf {
    seed_run.join(format!("stage-{stage}")).join(format!("epoch-{epoch}.ckpt"))
}

/// The checkpoint a finished run is evaluated from.
pub fn final_checkpoint(seed_run: &Path, cfg: &TrainConfig) -> PathBuf {
    let stage = match cfg.stage {
        Stage::Generator => "generator",
        Stage::Main | Stage::Joint => "main",
    };
    checkpoint_path(seed_run, stage, cfg.epochs)
}

/// Writes the final checkpoints and `metrics.csv` of a run into `seed_run`.
pub fn write_outcome(outcome: &TrainOutcome, cfg: &TrainConfig, seed_run: &Path) -> Result<()> {
    fs::create_dir_all(seed_run).at(seed_run)?;
    let generator_trained = match cfg.stage {
        Stage::Generator => true,
        Stage::Main => cfg.variant.uses_fine(),
        Stage::Joint => false,
    };
    if generator_trained {
        let path = checkpoint_path(seed_run, "generator", cfg.epochs);
        fs::create_dir_all(path.parent().unwrap()).at(&path)?;
        write_checkpoint(&path, &outcome.model.generator_tensors())?;
    }
    if cfg.stage != Stage::Generator {
        let path = checkpoint_path(seed_run, "main", cfg.epochs);
        fs::create_dir_all(path.parent().unwrap()).at(&path)?;
        write_checkpoint(&path, &outcome.model.named_tensors())?;
    }
    write_metrics(&seed_run.join("metrics.csv"), &outcome.trace)
}

pub fn write_metrics(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
