//! Parameter trees and the checkpoint format.
//!
//! Parameter structs are generic over their leaf type: `Foo<Mat>` holds
//! weights, `Foo<Var>` is the same tree bound onto a [`Graph`], and mapping a
//! bound tree through [`Gradients`] yields a `Foo<Mat>` of gradients. Leaves
//! are addressed by dotted names (`segmentation.layers.0.attn.q.1`), which is
//! what the optimizer state and checkpoints are keyed by.
//!
//! Checkpoint layout: a text header, then the raw little-endian `f64` payload
//! of every tensor in header order.
//!
//! ```text
//! hiant-checkpoint 1
//! <name> <rows> <cols>
//! ...
//! end
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, IoContext, Result};
use crate::tensor::Mat;

const CHECKPOINT_MAGIC: &str = "hiant-checkpoint 1";

/// Implements `map`, `visit` and `visit_mut` for a parameter struct generic
/// over its leaf type.
macro_rules! param_tree {
    ($name:ident {
        $(leaves: [$($leaf:ident),* $(,)?],)?
        $(leaf_vecs: [$($lv:ident),* $(,)?],)?
        $(nodes: [$($node:ident),* $(,)?],)?
        $(node_vecs: [$($nv:ident),* $(,)?],)?
    }) => {
        #[allow(dead_code)]
        impl<T> $name<T> {
            pub fn map<U, F: FnMut(&T) -> U>(&self, f: &mut F) -> $name<U> {
                $name {
                    $($($leaf: f(&self.$leaf),)*)?
                    $($($lv: self.$lv.iter().map(|x| f(x)).collect(),)*)?
                    $($($node: self.$node.map(f),)*)?
                    $($($nv: self.$nv.iter().map(|x| x.map(f)).collect(),)*)?
                }
            }

            pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
                $($(f($crate::params::join(prefix, stringify!($leaf)), &self.$leaf);)*)?
                $($(
                    for (i, x) in self.$lv.iter().enumerate() {
                        f(format!("{}.{i}", $crate::params::join(prefix, stringify!($lv))), x);
                    }
                )*)?
                $($(self.$node.visit(&$crate::params::join(prefix, stringify!($node)), f);)*)?
                $($(
                    for (i, x) in self.$nv.iter().enumerate() {
                        x.visit(&format!("{}.{i}", $crate::params::join(prefix, stringify!($nv))), f);
                    }
                )*)?
            }

            pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
                $($(f($crate::params::join(prefix, stringify!($leaf)), &mut self.$leaf);)*)?
                $($(
                    for (i, x) in self.$lv.iter_mut().enumerate() {
                        f(format!("{}.{i}", $crate::params::join(prefix, stringify!($lv))), x);
                    }
                )*)?
                $($(self.$node.visit_mut(&$crate::params::join(prefix, stringify!($node)), f);)*)?
                $($(
                    for (i, x) in self.$nv.iter_mut().enumerate() {
                        x.visit_mut(&format!("{}.{i}", $crate::params::join(prefix, stringify!($nv))), f);
                    }
                )*)?
            }
        }
    };
}
pub(crate) use param_tree;

pub(crate) fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

/// Per-parameter RNG keyed by `(seed, name)`, so adding or removing other
/// parameters never shifts the initial values of this one.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: T,
    pub beta: T,
}

param_tree!(LayerNormParams { leaves: [gamma, beta], });

impl LayerNormParams<Mat> {
    pub fn new(width: usize) -> Self {
        LayerNormParams {
            gamma: Mat::filled(1, width, 1.0),
            beta: Mat::zeros(1, width),
        }
    }
}

impl LayerNormParams<Var> {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        g.layer_norm(x, self.gamma, self.beta)
    }
}

/// Gradient of one bound leaf, zero when the loss did not reach it.
pub fn grad_of(g: &Graph, grads: &Gradients, v: Var) -> Mat {
    grads.get_or_zeros(v, g.shape(v))
}

/// Flat, ordered view of named tensors.
pub type NamedTensors = BTreeMap<String, Mat>;

pub fn collect_named(visit: impl FnOnce(&mut dyn FnMut(String, &Mat))) -> NamedTensors {
    let mut out = NamedTensors::new();
    visit(&mut |name, m| {
        out.insert(name, m.clone());
    });
    out
}

/// Overwrites every visited leaf from `named`; every leaf must be present with
/// a matching shape.
pub fn assign_named(named: &NamedTensors, visit_mut: impl FnOnce(&mut dyn FnMut(String, &mut Mat))) -> Result<()> {
    let mut err = None;
    visit_mut(&mut |name, m| {
        if err.is_some() {
            return;
        }
        match named.get(&name) {
            Some(src) if src.shape() == m.shape() => *m = src.clone(),
            Some(src) => {
                err = Some(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    src.shape(),
                    m.shape()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("tensor `{name}` missing"))),
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn write_checkpoint(path: &Path, tensors: &NamedTensors) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    let mut header = format!("{CHECKPOINT_MAGIC}\n");
    for (name, m) in tensors {
        if name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("tensor name `{name}` contains whitespace")));
        }
        header.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    for m in tensors.values() {
        for v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).at(path)
}

pub fn read_checkpoint(path: &Path) -> Result<NamedTensors> {
    let file = fs::File::open(path).at(path)?;
    let mut reader = BufReader::new(file);
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut line = String::new();
    reader.read_line(&mut line).at(path)?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(bad("missing checkpoint header".into()));
    }
    let mut entries = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).at(path)? == 0 {
            return Err(bad("header not terminated".into()));
        }
        let l = line.trim_end();
        if l == "end" {
            break;
        }
        let parts: Vec<&str> = l.split(' ').collect();
        let [name, rows, cols] = parts[..] else {
            return Err(bad(format!("malformed header line `{l}`")));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad dimension in `{l}`")));
        entries.push((name.to_string(), parse(rows)?, parse(cols)?));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).at(path)?;
    let expected: usize = entries.iter().map(|(_, r, c)| r * c * 8).sum();
    if payload.len() != expected {
        return Err(bad(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut out = NamedTensors::new();
    let mut off = 0;
    for (name, r, c) in entries {
        let n = r * c;
        let data = payload[off..off + n * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        off += n * 8;
        out.insert(name, Mat::from_vec(r, c, data));
    }
    Ok(out)
}
