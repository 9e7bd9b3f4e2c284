//! MoC accuracy, the observation/prediction-rate protocol and the ablation
//! harness.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, ProtocolSpec, Variant};
use crate::datasets::{make_sample, AnticipationSample, Corpus};
use crate::error::{Error, Result};
use crate::model::Model;

/// Mean over classes present in `truth` of the per-class frame accuracy.
pub fn moc_accuracy(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(Error::EmptyHorizon);
    }
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for l in [p, t] {
            if l >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: n_classes,
                });
            }
        }
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let (sum, present) = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &n)| n > 0)
        .fold((0.0, 0usize), |(s, c), (&h, &n)| (s + h as f64 / n as f64, c + 1));
    Ok(sum / present as f64)
}

/// Fraction of frames where `pred` equals `truth`.
pub fn frame_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(Error::EmptyHorizon);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// MoC of the model's future prediction for one sample.
pub fn sample_moc(model: &Model, sample: &AnticipationSample) -> Result<f64> {
    let pred = model.predict(&sample.observed.values, sample.horizon())?;
    moc_accuracy(&pred.future.expanded, &sample.future_labels, model.dims.n_fine)
}

/// Coarse segmentation frame accuracy pooled over every frame of `corpus`.
pub fn segmentation_accuracy(model: &Model, corpus: &Corpus) -> Result<f64> {
    let counts: Vec<(usize, usize)> = corpus
        .videos
        .par_iter()
        .map(|v| {
            let pred = model.segment_frames(&v.features.values)?;
            let truth = v.labels.coarse_per_frame();
            Ok((pred.iter().zip(&truth).filter(|(p, t)| p == t).count(), truth.len()))
        })
        .collect::<Result<_>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |(h, t), (a, b)| (h + a, t + b));
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(hits as f64 / total as f64)
}

/// Chance baselines: segmentation accuracy of the better of uniform guessing
/// and always predicting the majority coarse class; MoC of uniform guessing
/// over fine classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chance {
    pub segmentation: f64,
    pub moc: f64,
}

pub fn chance_levels(corpus: &Corpus) -> Chance {
    let mut counts = vec![0usize; corpus.n_coarse];
    for v in &corpus.videos {
        for s in v.labels.segments() {
            counts[s.coarse_id] += s.len();
        }
    }
    let total: usize = counts.iter().sum();
    let majority = counts.iter().copied().max().unwrap_or(0) as f64 / total.max(1) as f64;
    Chance {
        segmentation: majority.max(1.0 / corpus.n_coarse as f64),
        moc: 1.0 / corpus.n_fine as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub video_id: String,
    pub moc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub alpha: f64,
    pub beta: f64,
    pub mean_moc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolReport {
    pub rows: Vec<ProtocolRow>,
    pub summary: Vec<SummaryRow>,
}

/// Per-sample MoC for every (α, β, seed) and eligible video of `corpus`.
pub fn protocol_rows(models: &[(u64, Model)], corpus: &Corpus, spec: &ProtocolSpec) -> Result<Vec<ProtocolRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &alpha in &spec.alphas {
        for &beta in &spec.betas {
            let samples: Vec<_> = (0..corpus.len())
                .filter_map(|i| make_sample(corpus, i, alpha, beta))
                .collect();
            for (seed, model) in models {
                let mocs: Vec<f64> = samples.par_iter().map(|s| sample_moc(model, s)).collect::<Result<_>>()?;
                rows.extend(samples.iter().zip(mocs).map(|(s, moc)| ProtocolRow {
                    alpha,
                    beta,
                    seed: *seed,
                    video_id: s.video_id.clone(),
                    moc,
                }));
            }
        }
    }
    Ok(rows)
}

/// Cell value per (α, β): the mean over seeds of the per-seed mean over
/// videos. Cells keep the order in which they first appear in `rows`.
pub fn summarize(rows: &[ProtocolRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(f64, f64)> = Vec::new();
    // (α, β) bits -> seed -> (sum, count)
    let mut cells: BTreeMap<(u64, u64), BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let key = (r.alpha.to_bits(), r.beta.to_bits());
        if !cells.contains_key(&key) {
            order.push((r.alpha, r.beta));
        }
        let e = cells.entry(key).or_default().entry(r.seed).or_insert((0.0, 0));
        e.0 += r.moc;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|(alpha, beta)| {
            let per_seed = &cells[&(alpha.to_bits(), beta.to_bits())];
            let mean_moc =
                per_seed.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_seed.len() as f64;
            SummaryRow { alpha, beta, mean_moc }
        })
        .collect()
}

pub fn run_protocol(models: &[(u64, Model)], corpus: &Corpus, spec: &ProtocolSpec) -> Result<ProtocolReport> {
    let rows = protocol_rows(models, corpus, spec)?;
    let summary = summarize(&rows);
    Ok(ProtocolReport { rows, summary })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_report(dir: &Path, report: &ProtocolReport) -> Result<()> {
    write_csv(&dir.join("protocol.csv"), &report.rows)?;
    write_csv(&dir.join("summary.csv"), &report.summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub mean_moc: f64,
}

/// `with − without` for one comparison, seed (or `mean`) and cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub comparison: String,
    pub seed: String,
    pub alpha: f64,
    pub beta: f64,
    pub with: f64,
    pub without: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCountRow {
    pub variant: String,
    pub active_params: usize,
    pub fusion_inputs: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub deltas: Vec<DeltaRow>,
    pub params: Vec<ParamCountRow>,
}

/// Number of parameters that influence the predictions of `variant`.
pub fn active_params(model: &Model, variant: Variant) -> usize {
    let mut n = 0;
    model.main.visit("main", &mut |name, m| {
        let label_branch = name.starts_with("main.fusion.label_embed")
            || name.starts_with("main.fusion.mhca")
            || name.starts_with("main.fusion.ln_cross");
        if variant.uses_labels() || !label_branch {
            n += m.len();
        }
    });
    if variant.uses_fine() {
        model.generator.visit("generator", &mut |_, m| n += m.len());
    }
    n
}

fn fusion_inputs(v: Variant) -> &'static str {
    match (v.uses_fine(), v.uses_labels()) {
        (true, true) => "video+fine+labels",
        (false, true) => "video+labels",
        (true, false) => "video+fine",
        (false, false) => "video",
    }
}

/// Trains every requested variant for every seed under the same config and
/// data split, then scores each on the held-out videos.
///
/// Variants that train the identical model are trained once and reported
/// under each name. `on_trained` sees every (variant, seed, model) as it
/// finishes.
pub fn run_ablation(
    corpus: &Corpus,
    cfg: &Config,
    variants: &[Variant],
    spec: &ProtocolSpec,
    mut on_trained: impl FnMut(Variant, u64, &Model) -> Result<()>,
) -> Result<AblationReport> {
    spec.validate()?;
    let (_, held_idx) = corpus.split_indices(cfg.train.held_out_fraction, cfg.train.split_seed);
    let held = corpus.subset(&held_idx);
    let mut cache: BTreeMap<(Variant, u64), Vec<SummaryRow>> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut params = Vec::new();
    for &variant in variants {
        let canon = variant.canonical();
        let mut count = None;
        for &seed in &spec.seeds {
            if !cache.contains_key(&(canon, seed)) {
                let mut c = cfg.clone();
                c.train.variant = canon;
                let outcome = crate::training::train(corpus, &c, seed)?;
                on_trained(canon, seed, &outcome.model)?;
                let model = outcome.model;
                let summary = summarize(&protocol_rows(&[(seed, model)], &held, spec)?);
                cache.insert((canon, seed), summary);
            }
            if count.is_none() {
                let m = Model::init(cfg.model.clone(), crate::model::Dims::of(corpus), canon, seed)?;
                count = Some(active_params(&m, variant));
            }
            for s in &cache[&(canon, seed)] {
                rows.push(AblationRow {
                    variant: variant.name().to_string(),
                    seed,
                    alpha: s.alpha,
                    beta: s.beta,
                    mean_moc: s.mean_moc,
                });
            }
        }
        params.push(ParamCountRow {
            variant: variant.name().to_string(),
            active_params: count.unwrap_or(0),
            fusion_inputs: fusion_inputs(variant).to_string(),
        });
    }
    let deltas = ablation_deltas(&rows, spec);
    Ok(AblationReport { rows, deltas, params })
}

/// Pairs compared in the ablation tables: (with, without).
pub const COMPARISONS: [(Variant, Variant); 2] = [
    (Variant::Multimodal, Variant::Unimodal),
    (Variant::Multilevel, Variant::NoMultilevel),
];

pub fn ablation_deltas(rows: &[AblationRow], spec: &ProtocolSpec) -> Vec<DeltaRow> {
    let find = |v: Variant, seed: u64, a: f64, b: f64| {
        rows.iter()
            .find(|r| r.variant == v.name() && r.seed == seed && r.alpha == a && r.beta == b)
            .map(|r| r.mean_moc)
    };
    let mut out = Vec::new();
    for (with, without) in COMPARISONS {
        let comparison = format!("{}-{}", with.name(), without.name());
        for &alpha in &spec.alphas {
            for &beta in &spec.betas {
                let mut pairs = Vec::new();
                for &seed in &spec.seeds {
                    if let (Some(w), Some(o)) = (find(with, seed, alpha, beta), find(without, seed, alpha, beta)) {
                        pairs.push((w, o));
                        out.push(DeltaRow {
                            comparison: comparison.clone(),
                            seed: seed.to_string(),
                            alpha,
                            beta,
                            with: w,
                            without: o,
                            delta: w - o,
                        });
                    }
                }
                if !pairs.is_empty() {
                    let n = pairs.len() as f64;
                    let w = pairs.iter().map(|p| p.0).sum::<f64>() / n;
                    let o = pairs.iter().map(|p| p.1).sum::<f64>() / n;
                    out.push(DeltaRow {
                        comparison: comparison.clone(),
                        seed: "mean".into(),
                        alpha,
                        beta,
                        with: w,
                        without: o,
                        delta: w - o,
                    });
                }
            }
        }
    }
    out
}

pub fn write_ablation(dir: &Path, report: &AblationReport) -> Result<()> {
    write_csv(&dir.join("ablation.csv"), &report.rows)?;
    write_csv(&dir.join("ablation_deltas.csv"), &report.deltas)?;
    write_csv(&dir.join("ablation_params.csv"), &report.params)
}
