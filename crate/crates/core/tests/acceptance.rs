//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line per criterion; exits non-zero if any fails.

// `!(x < tol)` is deliberate: a NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hiant::attention::{attention, mhsa, AttentionParams};
use hiant::cli::{cmd_eval, cmd_gen_data, cmd_train, load_run_model};
use hiant::datasets::{generate_corpus, make_sample, read_corpus, CorpusSpec};
use hiant::evaluation::{
    chance_levels, moc_accuracy, read_csv, run_ablation, segmentation_accuracy, write_ablation, ProtocolRow, SummaryRow,
};
use hiant::finegrained::{
    form_clusters, generator_total_loss, inter_loss, intra_loss, tcl_loss, ClusterAssignment, TclWeights,
};
use hiant::segmentation::{seg_layer, segment, PositionAnchor, PositionalEncoding, SegLayerParams, SegmentationParams};
use hiant::training::{held_out_moc, lr_schedule, train};
use hiant::{Config, Dims, Mat, ProtocolSpec, TrainConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;
type Cell = ((f64, f64), BTreeMap<u64, Vec<f64>>);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect())
}

fn random_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

// ---------------------------------------------------------------------------
// Scalar oracles on nested vectors, written independently of the library.

type M = Vec<Vec<f64>>;

fn to_m(m: &Mat) -> M {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn add_bias(a: &M, b: &[f64]) -> M {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn layer_norm(a: &M, gamma: &[f64], beta: &[f64]) -> M {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gamma[j] + beta[j])
                .collect()
        })
        .collect()
}

fn oracle_attention(q_in: &M, kv: &M, p: &AttentionParams<Mat>) -> M {
    let mut heads: Vec<M> = Vec::new();
    for h in 0..p.q.len() {
        let q = mm(q_in, &to_m(&p.q[h]));
        let k = mm(kv, &to_m(&p.k[h]));
        let v = mm(kv, &to_m(&p.v[h]));
        let dh = q[0].len() as f64;
        let out: M = q
            .iter()
            .map(|qi| {
                let logits: Vec<f64> = k
                    .iter()
                    .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt())
                    .collect();
                let w = softmax(&logits);
                (0..v[0].len())
                    .map(|c| w.iter().zip(&v).map(|(wj, vj)| wj * vj[c]).sum())
                    .collect()
            })
            .collect();
        heads.push(out);
    }
    let cat: M = (0..q_in.len())
        .map(|i| heads.iter().flat_map(|h| h[i].clone()).collect())
        .collect();
    mm(&cat, &to_m(&p.o))
}

fn oracle_layer(h: &M, p: &SegLayerParams<Mat>, pos: &M) -> M {
    let a = oracle_attention(&add(h, pos), &add(h, pos), &p.attn);
    let a = layer_norm(&a, p.ln1.gamma.row(0), p.ln1.beta.row(0));
    let z = add_bias(&mm(&a, &to_m(&p.w1)), p.b1.row(0));
    let z: M = z.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
    let f = add_bias(&mm(&z, &to_m(&p.w2)), p.b2.row(0));
    let inner = layer_norm(&add(&f, h), p.ln2.gamma.row(0), p.ln2.beta.row(0));
    add(&inner, h)
}

fn oracle_head(h: &M, w: &Mat, b: &Mat) -> M {
    add_bias(&mm(h, &to_m(w)), b.row(0)).iter().map(|r| softmax(r)).collect()
}

/// Runs of equal labels, numbered in order of appearance.
fn oracle_runs(labels: &[usize]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(labels.len());
    let mut next = 0;
    for i in 0..labels.len() {
        if i > 0 && labels[i] != labels[i - 1] {
            next += 1;
        }
        ids.push(next);
    }
    ids
}

fn oracle_centroids(x: &M, ids: &[usize]) -> Vec<Vec<f64>> {
    let k = ids.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = x.iter().zip(ids).filter(|(_, &i)| i == c).map(|(r, _)| r).collect();
            (0..x[0].len())
                .map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect()
}

fn oracle_intra(x: &M, ids: &[usize]) -> f64 {
    let mu = oracle_centroids(x, ids);
    x.iter()
        .zip(ids)
        .map(|(r, &c)| r.iter().zip(&mu[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum()
}

fn oracle_inter(x: &M, ids: &[usize]) -> f64 {
    let mu = oracle_centroids(x, ids);
    let mut s = 0.0;
    for a in 0..mu.len() {
        for b in 0..mu.len() {
            if a != b {
                let d: f64 = mu[a].iter().zip(&mu[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                s += 1.0 / d;
            }
        }
    }
    s
}

fn oracle_ce(logits: &M, targets: &[usize]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(r, &t)| -softmax(r)[t].ln())
        .sum::<f64>()
        / targets.len() as f64
}

fn oracle_moc(pred: &[usize], truth: &[usize], n: usize) -> f64 {
    let mut accs = Vec::new();
    for c in 0..n {
        let total = truth.iter().filter(|&&t| t == c).count();
        if total > 0 {
            let hit = pred.iter().zip(truth).filter(|(&p, &t)| t == c && p == c).count();
            accs.push(hit as f64 / total as f64);
        }
    }
    accs.iter().sum::<f64>() / accs.len() as f64
}

fn rel_m(a: &Mat, b: &M) -> f64 {
    let mut diff = 0.0;
    let mut scale = 0.0;
    for (r, row) in b.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            diff += (a.row(r)[c] - v).powi(2);
            scale += v * v;
        }
    }
    diff.sqrt() / scale.sqrt().max(1e-300)
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn randomize_layer(p: &mut SegLayerParams<Mat>, rng: &mut ChaCha8Rng) {
    for m in [&mut p.b1, &mut p.b2, &mut p.ln1.beta, &mut p.ln2.beta] {
        *m = random_mat(1, m.cols(), rng);
    }
    for m in [&mut p.ln1.gamma, &mut p.ln2.gamma] {
        *m = random_mat(1, m.cols(), rng).map(|v| 1.0 + 0.3 * v);
    }
}

/// Tiny shapes: `T ≤ 4`, `d ≤ 8`, `K ≤ 3`.
struct Shape {
    t: usize,
    d: usize,
    heads: usize,
    k: usize,
}

fn tiny_shape(rng: &mut ChaCha8Rng) -> Shape {
    let d = [2, 4, 6, 8][rng.random_range(0..4)];
    let heads = if d % 2 == 0 && rng.random_bool(0.5) { 2 } else { 1 };
    Shape {
        t: rng.random_range(1..=4),
        d,
        heads,
        k: rng.random_range(1..=3),
    }
}

const INSTANCES: usize = 25;

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for i in 0..INSTANCES as u64 {
        let mut r = rng(1000 + i);
        let s = tiny_shape(&mut r);
        let x = random_mat(s.t, s.d, &mut r);
        let xm = to_m(&x);

        // clustering needs at least one frame; use random labels over K classes
        let labels = random_labels(s.t, s.k, &mut r);
        let clusters = form_clusters(&labels);
        let ids = oracle_runs(&labels);
        note("intra_loss", rel(intra_loss(&x, &clusters), oracle_intra(&xm, &ids)));
        note("inter_loss", rel(inter_loss(&x, &clusters), oracle_inter(&xm, &ids)));
        let w = TclWeights {
            lambda_intra: r.random_range(0.0..2.0),
            lambda_inter: r.random_range(0.0..2.0),
        };
        let tcl_want = w.lambda_intra * oracle_intra(&xm, &ids) + w.lambda_inter * oracle_inter(&xm, &ids);
        note("tcl_loss", rel(tcl_loss(&x, &clusters, w), tcl_want));

        let logits = random_mat(s.t, s.k, &mut r);
        let got = generator_total_loss(&logits, &labels, &x, &clusters, w).map_err(|e| e.to_string())?;
        note("generator_total_loss", rel(got, oracle_ce(&to_m(&logits), &labels) + tcl_want));

        let attn = AttentionParams::init(s.d, s.heads, s.d / s.heads, 2000 + i, "a");
        let got = mhsa(&x, &attn).map_err(|e| e.to_string())?;
        note("mhsa", rel_m(&got, &oracle_attention(&xm, &xm, &attn)));

        let mut layer = SegLayerParams::init(s.d, s.heads, 2 * s.d, 3000 + i, "l");
        randomize_layer(&mut layer, &mut r);
        let pos = random_mat(s.t, s.d, &mut r);
        let got = seg_layer(&x, &layer, &pos, true).map_err(|e| e.to_string())?;
        note("seg_layer", rel_m(&got, &oracle_layer(&xm, &layer, &to_m(&pos))));

        let mut seg = SegmentationParams::init(s.d, s.heads, 2 * s.d, 2, s.k, 4000 + i, "s");
        for l in &mut seg.layers {
            randomize_layer(l, &mut r);
        }
        seg.head_b = random_mat(1, s.k, &mut r);
        let pe = PositionalEncoding::new(8, s.d, PositionAnchor::End);
        let pos = pe.rows(s.t).map_err(|e| e.to_string())?;
        let (probs, hidden) = segment(&hiant::encoder::TokenSequence(x.clone()), &seg, &pe, true).map_err(|e| e.to_string())?;
        let mut h = xm.clone();
        for l in &seg.layers {
            h = oracle_layer(&h, l, &to_m(&pos));
        }
        note("segment_hidden", rel_m(&hidden, &h));
        note("segmentation_head", rel_m(&probs, &oracle_head(&h, &seg.head_w, &seg.head_b)));

        let vidseg = random_mat(s.t, s.d, &mut r);
        let mhca = AttentionParams::init(s.d, s.heads, s.d / s.heads, 5000 + i, "c");
        let (got, _) = attention(&x, &vidseg, &mhca).map_err(|e| e.to_string())?;
        note("cross_attend", rel_m(&got, &oracle_attention(&xm, &to_m(&vidseg), &mhca)));

        let n_classes = s.k + 1;
        let len = r.random_range(1..=8);
        let truth = random_labels(len, n_classes, &mut r);
        let pred = random_labels(len, n_classes, &mut r);
        let got = moc_accuracy(&pred, &truth, n_classes).map_err(|e| e.to_string())?;
        note("moc_accuracy", rel(got, oracle_moc(&pred, &truth, n_classes)));
    }
    let elapsed = start.elapsed();
    let max = worst.values().cloned().fold(0.0, f64::max);
    let summary = format!(
        "{} ops x {INSTANCES} instances, max rel err {max:.2e}, {:.1}s",
        worst.len(),
        elapsed.as_secs_f64()
    );
    let bad: Vec<String> = worst
        .iter()
        .filter(|(_, &e)| !(e < 1e-9))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    if !bad.is_empty() {
        return Err(format!("{summary}; over tolerance: {}", bad.join(", ")));
    }
    if elapsed > Duration::from_secs(30) {
        return Err(format!("{summary}; slower than 30s"));
    }
    Ok(summary)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let results = hiant::gradcheck::run_scope("all", 0).ok_or("scope `all` unknown")?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} {:.2e} (tol {:.0e})", r.name, r.max_rel_err, r.tolerance))
        .collect();
    let worst = results
        .iter()
        .max_by(|a, b| (a.max_rel_err / a.tolerance).total_cmp(&(b.max_rel_err / b.tolerance)))
        .ok_or("no checks ran")?;
    let summary = format!(
        "{} checks, worst {} {:.2e} (tol {:.0e}), {:.1}s",
        results.len(),
        worst.name,
        worst.max_rel_err,
        worst.tolerance,
        elapsed.as_secs_f64()
    );
    if !failed.is_empty() {
        return Err(format!("{summary}; failed: {}", failed.join(", ")));
    }
    if elapsed > Duration::from_secs(120) {
        return Err(format!("{summary}; slower than 2 min"));
    }
    Ok(summary)
}

const LAW_CASES: usize = 200;

fn random_clusters(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, ClusterAssignment) {
    let labels = random_labels(n, 3, rng);
    let c = form_clusters(&labels);
    (labels, c)
}

fn criterion_3() -> Outcome {
    let mut worst = [0.0f64; 3];
    let mut monotone_failures = 0;
    let mut iff_failures = 0;
    for i in 0..LAW_CASES as u64 {
        let mut r = rng(7000 + i);
        let n = r.random_range(2..=12);
        let d = r.random_range(1..=6);
        let x = random_mat(n, d, &mut r);
        let (_, c) = random_clusters(n, &mut r);

        // translation invariance of intra and inter
        let shift = random_mat(1, d, &mut r).scaled(10.0);
        let mut moved = x.clone();
        for row in 0..n {
            for (v, s) in moved.row_mut(row).iter_mut().zip(shift.row(0)) {
                *v += s;
            }
        }
        let (a, b) = (intra_loss(&x, &c), intra_loss(&moved, &c));
        worst[0] = worst[0].max((a - b).abs() / a.abs().max(1.0));
        if c.count > 1 {
            worst[1] = worst[1].max(rel(inter_loss(&x, &c), inter_loss(&moved, &c)));
            // 1/s homogeneity
            let s = r.random_range(0.1..10.0);
            worst[2] = worst[2].max(rel(inter_loss(&x.scaled(s), &c), inter_loss(&x, &c) / s));
        }

        // rigid separation of exactly two clusters
        let split = r.random_range(1..n);
        let two: Vec<usize> = (0..n).map(|j| usize::from(j >= split)).collect();
        let tc = form_clusters(&two);
        let mu = |cl: usize| -> Vec<f64> {
            let rows: Vec<usize> = (0..n).filter(|&j| two[j] == cl).collect();
            (0..d)
                .map(|k| rows.iter().map(|&j| x.row(j)[k]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let (m0, m1) = (mu(0), mu(1));
        let dir: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
        let step = r.random_range(0.01..2.0);
        let mut apart = x.clone();
        for j in split..n {
            for (v, g) in apart.row_mut(j).iter_mut().zip(&dir) {
                *v += step * g;
            }
        }
        let before = inter_loss(&x, &tc);
        let after = inter_loss(&apart, &tc);
        let intra_same = rel(intra_loss(&x, &tc), intra_loss(&apart, &tc)) < 1e-9
            || (intra_loss(&x, &tc) - intra_loss(&apart, &tc)).abs() < 1e-12;
        if !(after < before) || !intra_same {
            monotone_failures += 1;
        }

        // intra = 0 iff every cluster is a single point
        let mut degenerate = x.clone();
        for j in 1..n {
            if c.ids[j] == c.ids[j - 1] {
                let prev = degenerate.row(j - 1).to_vec();
                degenerate.row_mut(j).copy_from_slice(&prev);
            }
        }
        let zero = intra_loss(&degenerate, &c);
        let has_multi = c.ids.windows(2).any(|w| w[0] == w[1]);
        let positive = intra_loss(&x, &c);
        if zero.abs() > 1e-9 || (has_multi && !(positive > 1e-9)) || (!has_multi && positive != 0.0) {
            iff_failures += 1;
        }
    }
    let summary = format!(
        "{LAW_CASES} cases per law; translation intra {:.1e} inter {:.1e}, 1/s homogeneity {:.1e}, \
         separation failures {monotone_failures}, zero-iff failures {iff_failures}",
        worst[0], worst[1], worst[2]
    );
    if worst.iter().all(|&w| w < 1e-9) && monotone_failures == 0 && iff_failures == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_4() -> Outcome {
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for len in 0..=8usize {
        for bits in 0..(1u32 << len) {
            let labels: Vec<usize> = (0..len).map(|i| ((bits >> i) & 1) as usize).collect();
            let got = form_clusters(&labels);
            // brute force: i and j share a cluster iff no label change lies between them
            let mut ok = got.ids.len() == len;
            for i in 0..len {
                for j in i..len {
                    let same_run = labels[i..=j].iter().all(|&l| l == labels[i]);
                    ok &= ok && (got.ids[i] == got.ids[j]) == same_run;
                }
            }
            ok &= got.ids == oracle_runs(&labels);
            ok &= got.count == oracle_runs(&labels).last().map_or(0, |m| m + 1);
            cases += 1;
            if !ok {
                mismatches.push(format!("{labels:?}"));
            }
        }
    }
    let summary = format!("{cases} sequences (lengths 0..=8, 256 of length 8), {} mismatches", mismatches.len());
    if mismatches.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}: {}", mismatches.iter().take(3).cloned().collect::<Vec<_>>().join(" ")))
    }
}

const PROTOCOL_SPEC: &str = r#"
n_videos = 10
n_coarse = 3
n_fine = 6
feature_dim = 6
mean_video_len = 60.0
mean_segment_len = 10.0
drift_rate = 0.02
noise_std = 1.0
seed = 5
"#;

const PROTOCOL_CONFIG: &str = r#"
[model]
width = 8
heads = 2
ffn_mult = 2
seg_layers = 1
gen_layers = 1
n_queries = 4
stride = 2
max_len = 128

[train]
epochs = 3
warmup_epochs = 1
batch_size = 4
passes_per_epoch = 1
held_out_fraction = 0.3
"#;

fn criterion_5(work: &Path) -> Outcome {
    let e = |x: hiant::Error| x.to_string();
    let corpus_dir = work.join("c5-corpus");
    let run = work.join("c5-run");
    let spec: CorpusSpec = toml::from_str(PROTOCOL_SPEC).map_err(|x| x.to_string())?;
    cmd_gen_data(&spec, &corpus_dir, true).map_err(e)?;
    let cfg = Config::from_toml(PROTOCOL_CONFIG)?;
    let protocol = ProtocolSpec::default();
    cmd_train(&cfg, &corpus_dir, &run, &protocol.seeds, true).map_err(e)?;
    let (a, b) = (work.join("c5-eval-a"), work.join("c5-eval-b"));
    cmd_eval(&run, &protocol, &a, true).map_err(e)?;
    cmd_eval(&run, &protocol, &b, true).map_err(e)?;

    let bytes = |p: &Path| fs::read(p).map_err(|x| format!("{}: {x}", p.display()));
    let identical = bytes(&a.join("summary.csv"))? == bytes(&b.join("summary.csv"))?
        && bytes(&a.join("protocol.csv"))? == bytes(&b.join("protocol.csv"))?;

    // Offline recomputation from the per-sample dump.
    let rows: Vec<ProtocolRow> = read_csv(&a.join("protocol.csv")).map_err(e)?;
    let summary: Vec<SummaryRow> = read_csv(&a.join("summary.csv")).map_err(e)?;
    let mut cells: Vec<Cell> = Vec::new();
    for r in &rows {
        let pos = match cells.iter().position(|(k, _)| *k == (r.alpha, r.beta)) {
            Some(p) => p,
            None => {
                cells.push(((r.alpha, r.beta), BTreeMap::new()));
                cells.len() - 1
            }
        };
        cells[pos].1.entry(r.seed).or_default().push(r.moc);
    }
    let mut cell_mismatch = cells.len() != summary.len();
    for (((alpha, beta), per_seed), s) in cells.iter().zip(&summary) {
        let mut seed_means = 0.0;
        for mocs in per_seed.values() {
            let mut sum = 0.0;
            for m in mocs {
                sum += m;
            }
            seed_means += sum / mocs.len() as f64;
        }
        let want = seed_means / per_seed.len() as f64;
        cell_mismatch |= s.alpha != *alpha || s.beta != *beta || s.mean_moc != want;
    }

    // Every dumped per-sample value matches a fresh prediction.
    let corpus = read_corpus(&corpus_dir).map_err(e)?;
    let dims = Dims::of(&corpus);
    let mut sample_mismatch = 0;
    let mut models = BTreeMap::new();
    for &seed in &protocol.seeds {
        models.insert(seed, load_run_model(&run, &cfg, dims, seed).map_err(e)?);
    }
    for r in &rows {
        let idx = corpus.videos.iter().position(|v| v.id() == r.video_id).ok_or("unknown video in dump")?;
        let sample = make_sample(&corpus, idx, r.alpha, r.beta).ok_or("dumped sample is not eligible")?;
        let pred = models[&r.seed].predict(&sample.observed.values, sample.horizon()).map_err(e)?;
        if oracle_moc(&pred.future.expanded, &sample.future_labels, corpus.n_fine) != r.moc {
            sample_mismatch += 1;
        }
    }
    let summary_line = format!(
        "{} cells, {} per-sample rows, seeds {:?}; byte-identical reruns: {identical}, cell mismatches: {}, sample mismatches: {sample_mismatch}",
        summary.len(),
        rows.len(),
        protocol.seeds,
        cell_mismatch as usize,
    );
    if identical && !cell_mismatch && sample_mismatch == 0 && !rows.is_empty() {
        Ok(summary_line)
    } else {
        Err(summary_line)
    }
}

fn criterion_6() -> Outcome {
    let e = |x: hiant::Error| x.to_string();
    let corpus = generate_corpus(&CorpusSpec::default()).map_err(e)?;
    let cfg = Config::default();
    let start = Instant::now();
    let out = train(&corpus, &cfg, 1).map_err(e)?;
    let elapsed = start.elapsed();
    let held = corpus.subset(&out.held_out_videos);
    let chance = chance_levels(&corpus);
    let seg = segmentation_accuracy(&out.model, &held).map_err(e)?;
    let moc = held_out_moc(&out.model, &held).map_err(e)?;
    let summary = format!(
        "seed 1, {:.0}s; held-out seg acc {seg:.3} vs chance {:.3} ({:.2}x), MoC(0.2, 0.5) {moc:.3} vs chance {:.3} ({:.2}x)",
        elapsed.as_secs_f64(),
        chance.segmentation,
        seg / chance.segmentation,
        chance.moc,
        moc / chance.moc
    );
    if elapsed < Duration::from_secs(600) && seg >= 2.0 * chance.segmentation && moc >= 3.0 * chance.moc {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_7(work: &Path) -> Outcome {
    let e = |x: hiant::Error| x.to_string();
    let corpus = generate_corpus(&CorpusSpec::default()).map_err(e)?;
    let cfg = Config::default();
    let spec = ProtocolSpec {
        alphas: vec![0.1, 0.2],
        ..ProtocolSpec::default()
    };
    let variants = [Variant::Multimodal, Variant::Unimodal, Variant::Multilevel, Variant::NoMultilevel];
    let report = run_ablation(&corpus, &cfg, &variants, &spec, |_, _, _| Ok(())).map_err(e)?;
    let out = work.join("c7-ablation");
    fs::create_dir_all(&out).map_err(|x| x.to_string())?;
    write_ablation(&out, &report).map_err(e)?;

    // Per α: mean over seeds and prediction rates.
    let mean = |v: Variant, alpha: f64| {
        let xs: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.variant == v.name() && r.alpha == alpha)
            .map(|r| r.mean_moc)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for (with, without) in hiant::evaluation::COMPARISONS {
        for &alpha in &spec.alphas {
            let (w, o) = (mean(with, alpha), mean(without, alpha));
            ok &= w >= o;
            parts.push(format!("{}-{} a={alpha}: {w:.4}-{o:.4}={:+.4}", with.name(), without.name(), w - o));
        }
    }
    let summary = format!("{}; tables in {}", parts.join(", "), out.display());
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_8() -> Outcome {
    let cfg = TrainConfig::default();
    let lr = |x: f64| lr_schedule(x, &cfg).map_err(|e| e.to_string());
    let checks = [
        ("lr(0)", lr(0.0)?, 0.0),
        ("lr(10)", lr(10.0)?, 1e-3),
        ("lr(35)", lr(35.0)?, 5e-4),
    ];
    let mut bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-15)
        .map(|(n, got, want)| format!("{n}={got:e} want {want:e}"))
        .collect();
    let near_end = lr(60.0 - 1e-9)?;
    if !(0.0..1e-12).contains(&near_end) {
        bad.push(format!("lr(60-1e-9)={near_end:e}"));
    }
    let jump = (lr(10.0 - 1e-12)? - lr(10.0)?).abs();
    if jump > 1e-12 {
        bad.push(format!("warmup jump {jump:e}"));
    }
    if lr(60.0).is_ok() || lr(-0.5).is_ok() {
        bad.push("out-of-range epochs accepted".into());
    }
    let summary = format!(
        "lr(0)={:e} lr(10)={:e} lr(35)={:e} lr(60-1e-9)={near_end:.1e} warmup jump {jump:.1e}",
        checks[0].1, checks[1].1, checks[2].1
    );
    if bad.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", bad.join(", ")))
    }
}

fn main() -> ExitCode {
    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if let Err(e) = fs::create_dir_all(&work) {
        eprintln!("cannot create {}: {e}", work.display());
        return ExitCode::FAILURE;
    }
    let criteria: Vec<(&str, Criterion)> = vec![
        ("formula oracles", Box::new(criterion_1)),
        ("gradient suite", Box::new(criterion_2)),
        ("loss laws", Box::new(criterion_3)),
        ("cluster formation", Box::new(criterion_4)),
        ("protocol integrity", Box::new(|| criterion_5(&work))),
        ("desk-scale end-to-end", Box::new(criterion_6)),
        ("directional ablations", Box::new(|| criterion_7(&work))),
        ("schedule", Box::new(criterion_8)),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
