//! Central finite-difference checks of every differentiable path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anticipation::{
    anticipation_layer_graph, anticipation_loss_graph, cross_attend_graph, decode_graph, fuse_graph,
    AnticipationTarget, FusionParams, QueryDecoderParams,
};
use crate::attention::{mhsa_graph, AttentionParams};
use crate::autograd::{Graph, Var};
use crate::config::{ModelConfig, Variant};
use crate::encoder::{encode_graph, EncoderParams};
use crate::finegrained::{fine_embed_graph, fine_forward_graph, form_clusters, tcl_graph, FineGeneratorParams, TclWeights};
use crate::model::{forward_graph, Dims, MainParams};
use crate::params::param_tree;
use crate::segmentation::{segment_graph, sinusoid_table, SegmentationParams};
use crate::tensor::Mat;

/// Relative-error bound for scalar losses.
pub const LOSS_TOL: f64 = 1e-4;
/// Relative-error bound for whole forward stacks.
pub const STACK_TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;

pub const SCOPES: [&str; 10] = [
    "encoder", "mhsa", "seg", "tcl", "generator", "fusion", "cross", "decoder", "anticipation", "all",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Largest per-tensor `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Number of input entries perturbed.
    pub entries: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn rel_err(a: &Mat, n: &Mat) -> f64 {
    let diff = a.zip_map(n, |x, y| x - y).norm();
    let scale = a.norm().max(n.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares the tape gradient of `build` w.r.t. every input with central
/// differences.
pub fn check(name: &str, tolerance: f64, inputs: &[Mat], build: impl Fn(&mut Graph, &[Var]) -> Var) -> CheckResult {
    let eval = |xs: &[Mat]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|m| g.leaf(m.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[k].shape());
        let mut numeric = Mat::zeros(inputs[k].rows(), inputs[k].cols());
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            xs[k].data_mut()[i] = x + STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x - STEP;
            let down = eval(&xs);
            xs[k].data_mut()[i] = x;
            numeric.data_mut()[i] = (up - down) / (2.0 * STEP);
        }
        entries += inputs[k].len();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    CheckResult {
        name: name.to_string(),
        max_rel_err: worst,
        tolerance,
        entries,
    }
}

/// Flattened parameter tree: leaf tensors in visit order.
fn flatten(visit: impl FnOnce(&mut dyn FnMut(String, &Mat))) -> Vec<Mat> {
    let mut out = Vec::new();
    visit(&mut |_, m| out.push(m.clone()));
    out
}

/// Hands out consecutive vars; used to rebind a flattened tree.
struct Cursor<'a> {
    vars: &'a [Var],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(vars: &'a [Var]) -> Self {
        Cursor { vars, at: 0 }
    }

    fn next(&mut self) -> Var {
        self.at += 1;
        self.vars[self.at - 1]
    }
}

/// Everything needed to build small random instances of each module.
struct Tiny {
    rng: ChaCha8Rng,
    len: usize,
    feat: usize,
    width: usize,
    heads: usize,
    ffn: usize,
    coarse: usize,
    fine: usize,
    queries: usize,
    seed: u64,
}

impl Tiny {
    fn new(seed: u64) -> Self {
        Tiny {
            rng: ChaCha8Rng::seed_from_u64(seed),
            len: 5,
            feat: 3,
            width: 4,
            heads: 2,
            ffn: 6,
            coarse: 3,
            fine: 4,
            queries: 3,
            seed,
        }
    }

    fn mat(&mut self, r: usize, c: usize) -> Mat {
        Mat::uniform(r, c, 1.0, &mut self.rng)
    }

    fn labels(&mut self, n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|_| self.rng.random_range(0..k)).collect()
    }

    /// Labels with runs, so clusters have several members.
    fn run_labels(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        let mut cur = self.rng.random_range(0..k);
        while out.len() < n {
            let run = self.rng.random_range(1..=3);
            for _ in 0..run {
                out.push(cur);
            }
            cur = (cur + self.rng.random_range(1..k)) % k;
        }
        out.truncate(n);
        out
    }

    fn pos(&self) -> Mat {
        sinusoid_table(self.len, self.width)
    }
}

/// Dense random linear read-out, so every output entry influences the loss.
fn probe(g: &mut Graph, x: Var, r: &Mat) -> Var {
    let rv = g.leaf(r.clone());
    let y = g.matmul(x, rv);
    g.sum(y)
}

fn run_encoder(t: &mut Tiny) -> Vec<CheckResult> {
    let f = t.mat(t.len, t.feat);
    let p = EncoderParams::init(t.feat, t.width, t.seed, "encoder");
    let r = t.mat(t.width, 1);
    vec![check("encoder", STACK_TOL, &[f, p.w.clone()], |g, v| {
        let x0 = encode_graph(g, v[0], &EncoderParams { w: v[1] }).unwrap();
        probe(g, x0, &r)
    })]
}

fn run_mhsa(t: &mut Tiny) -> Vec<CheckResult> {
    let p = AttentionParams::init(t.width, t.heads, t.width / t.heads, t.seed, "mhsa");
    let h = t.mat(t.len, t.width);
    let r = t.mat(t.width, 1);
    let mut inputs = vec![h];
    inputs.extend(flatten(|f| p.visit("", f)));
    vec![check("mhsa", STACK_TOL, &inputs, |g, v| {
        let mut c = Cursor::new(&v[1..]);
        let bound = p.map(&mut |_| c.next());
        let y = mhsa_graph(g, v[0], &bound);
        probe(g, y, &r)
    })]
}

fn run_seg(t: &mut Tiny) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for literal in [true, false] {
        let p = SegmentationParams::init(t.width, t.heads, t.ffn, 2, t.coarse, t.seed, "seg");
        let x = t.mat(t.len, t.width);
        let targets = t.labels(t.len, t.coarse);
        let pos = t.pos();
        let mut inputs = vec![x];
        inputs.extend(flatten(|f| p.visit("", f)));
        let name = if literal { "seg_stack" } else { "seg_stack_prenorm" };
        out.push(check(name, STACK_TOL, &inputs, |g, v| {
            let mut c = Cursor::new(&v[1..]);
            let bound = p.map(&mut |_| c.next());
            let pv = g.leaf(pos.clone());
            let o = segment_graph(g, v[0], &bound, pv, literal);
            g.cross_entropy(o.logits, &targets)
        }));
    }
    out
}

fn run_tcl(t: &mut Tiny) -> Vec<CheckResult> {
    let x = t.mat(8, t.width);
    let labels = t.run_labels(8, 3);
    let clusters = form_clusters(&labels);
    let w = TclWeights::default();
    vec![
        check("intra", LOSS_TOL, std::slice::from_ref(&x), |g, v| g.intra_loss(v[0], &clusters.ids)),
        check("inter", LOSS_TOL, std::slice::from_ref(&x), |g, v| g.inter_loss(v[0], &clusters.ids)),
        check("tcl", LOSS_TOL, std::slice::from_ref(&x), |g, v| {
            tcl_graph(g, v[0], &clusters, w).expect("non-zero weights")
        }),
    ]
}

fn run_generator(t: &mut Tiny) -> Vec<CheckResult> {
    let p = FineGeneratorParams::init(t.feat, t.width, t.heads, t.ffn, 2, t.fine, t.seed, "generator");
    let f = t.mat(t.len, t.feat);
    let targets = t.run_labels(t.len, t.fine);
    let clusters = form_clusters(&targets);
    let pos = t.pos();
    let mut inputs = vec![f];
    inputs.extend(flatten(|v| p.visit("", v)));
    vec![check("generator_total", STACK_TOL, &inputs, |g, v| {
        let mut c = Cursor::new(&v[1..]);
        let bound = p.map(&mut |_| c.next());
        let x0 = encode_graph(g, v[0], &bound.encoder).unwrap();
        let pv = g.leaf(pos.clone());
        let o = fine_forward_graph(g, x0, &bound, pv, true);
        let ce = g.cross_entropy(o.logits, &targets);
        let tcl = tcl_graph(g, o.hidden, &clusters, TclWeights::default()).unwrap();
        g.add(ce, tcl)
    })]
}

fn run_fusion(t: &mut Tiny) -> Vec<CheckResult> {
    let p = FusionParams::init(t.width, t.heads, t.coarse, t.seed, "fusion");
    let hv = t.mat(t.len, t.width);
    let table = t.mat(t.fine, t.width);
    let fine = t.labels(t.len, t.fine);
    let r = t.mat(t.width, 1);
    let mut inputs = vec![hv, table];
    inputs.extend(flatten(|f| p.visit("", f)));
    vec![
        check("fine_embed", STACK_TOL, &inputs[1..2], |g, v| {
            let e = fine_embed_graph(g, &fine, v[0], 2);
            probe(g, e, &r)
        }),
        check("fusion", STACK_TOL, &inputs, |g, v| {
            let mut c = Cursor::new(&v[2..]);
            let bound = p.map(&mut |_| c.next());
            let hf = fine_embed_graph(g, &fine, v[1], 2);
            let (_, fused) = fuse_graph(g, v[0], hf, &bound);
            probe(g, fused, &r)
        }),
    ]
}

fn run_cross(t: &mut Tiny) -> Vec<CheckResult> {
    let p = FusionParams::init(t.width, t.heads, t.coarse, t.seed, "fusion");
    let h = t.mat(t.len, t.width);
    let kv = t.mat(t.len, t.width);
    let r = t.mat(t.width, 1);
    let mut inputs = vec![h, kv];
    inputs.extend(flatten(|f| p.mhca.visit("", f)));
    let hv = t.mat(t.len, t.width);
    let hf = t.mat(t.len, t.width);
    let labels = t.labels(t.len, t.coarse);
    let mut layer_inputs = vec![hv, hf];
    layer_inputs.extend(flatten(|f| p.visit("", f)));
    vec![
        check("cross_attend", STACK_TOL, &inputs, |g, v| {
            let mut c = Cursor::new(&v[2..]);
            let bound = p.mhca.map(&mut |_| c.next());
            let y = cross_attend_graph(g, v[0], v[1], &bound);
            probe(g, y, &r)
        }),
        check("anticipation_layer", STACK_TOL, &layer_inputs, |g, v| {
            let mut c = Cursor::new(&v[2..]);
            let bound = p.map(&mut |_| c.next());
            let seg = g.gather_rows(bound.label_embed, &labels);
            let y = anticipation_layer_graph(g, v[0], v[1], Some(seg), &bound);
            probe(g, y, &r)
        }),
    ]
}

fn run_decoder(t: &mut Tiny) -> Vec<CheckResult> {
    let p = QueryDecoderParams::init(t.width, t.heads, t.ffn, t.queries, t.fine, t.seed, "decoder");
    let ctx = t.mat(t.len, t.width);
    let future = t.run_labels(7, t.fine);
    let target = AnticipationTarget::from_future(&future, t.queries, t.fine);
    let mut inputs = vec![ctx];
    inputs.extend(flatten(|f| p.visit("", f)));
    let logits = t.mat(t.queries, t.fine + 1);
    let durations = t.mat(1, t.queries);
    vec![
        check("anticipation_loss", LOSS_TOL, &[logits, durations], |g, v| {
            let d = g.softmax_rows(v[1]);
            let out = crate::anticipation::DecoderOutput {
                action_logits: v[0],
                durations: d,
            };
            anticipation_loss_graph(g, &out, &target)
        }),
        check("decoder", STACK_TOL, &inputs, |g, v| {
            let mut c = Cursor::new(&v[1..]);
            let bound = p.map(&mut |_| c.next());
            let out = decode_graph(g, v[0], &bound);
            anticipation_loss_graph(g, &out, &target)
        }),
        check("cross_entropy", LOSS_TOL, &[t.mat(t.len, t.coarse)], |g, v| {
            let targets: Vec<usize> = (0..t.len).map(|i| i % t.coarse).collect();
            g.cross_entropy(v[0], &targets)
        }),
    ]
}

/// Main model plus the trainable fine-label table, as one tree.
struct Full<T> {
    main: MainParams<T>,
    embed: T,
}

param_tree!(Full {
    leaves: [embed],
    nodes: [main],
});

fn run_anticipation(t: &mut Tiny) -> Vec<CheckResult> {
    let cfg = ModelConfig {
        width: t.width,
        heads: t.heads,
        ffn_mult: 2,
        seg_layers: 1,
        gen_layers: 1,
        n_queries: t.queries,
        stride: 1,
        pool_window: Some(2),
        max_len: 16,
        ..ModelConfig::default()
    };
    let dims = Dims {
        feature_dim: t.feat,
        n_coarse: t.coarse,
        n_fine: t.fine,
    };
    let full = Full {
        main: MainParams::init(&cfg, dims, t.seed),
        embed: t.mat(t.fine, t.width),
    };
    let f = t.mat(t.len, t.feat);
    let fine = t.labels(t.len, t.fine);
    let coarse = t.labels(t.len, t.coarse);
    let future = t.run_labels(9, t.fine);
    let target = AnticipationTarget::from_future(&future, t.queries, t.fine);
    let pe = crate::segmentation::PositionalEncoding::new(cfg.max_len, cfg.width, cfg.position_anchor);
    let mut inputs = vec![f];
    inputs.extend(flatten(|v| full.visit("", v)));
    let mut out = Vec::new();
    for variant in [Variant::Multilevel, Variant::NoMultilevel, Variant::Unimodal] {
        for soft in [false, true] {
            let cfg = ModelConfig {
                soft_labels: soft,
                ..cfg.clone()
            };
            let name = format!("model_{}{}", variant.name(), if soft { "_soft" } else { "" });
            out.push(check(&name, STACK_TOL, &inputs, |g, v| {
                let mut c = Cursor::new(&v[1..]);
                let bound = full.map(&mut |_| c.next());
                let x0 = encode_graph(g, v[0], &bound.main.encoder).unwrap();
                let o = forward_graph(g, &cfg, variant, &pe, &bound.main, bound.embed, x0, Some(&fine)).unwrap();
                let seg = g.cross_entropy(o.seg.logits, &coarse);
                let ant = anticipation_loss_graph(g, &o.decoder, &target);
                g.add(seg, ant)
            }));
        }
    }
    out
}

/// Runs the checks of one scope (see [`SCOPES`]); `None` for unknown scopes.
pub fn run_scope(scope: &str, seed: u64) -> Option<Vec<CheckResult>> {
    let mut t = Tiny::new(seed);
    let r = match scope {
        "encoder" => run_encoder(&mut t),
        "mhsa" => run_mhsa(&mut t),
        "seg" => run_seg(&mut t),
        "tcl" => run_tcl(&mut t),
        "generator" => run_generator(&mut t),
        "fusion" => run_fusion(&mut t),
        "cross" => run_cross(&mut t),
        "decoder" => run_decoder(&mut t),
        "anticipation" => run_anticipation(&mut t),
        "all" => SCOPES[..SCOPES.len() - 1]
            .iter()
            .flat_map(|s| run_scope(s, seed).unwrap())
            .collect(),
        _ => return None,
    };
    Some(r)
}
