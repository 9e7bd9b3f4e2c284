//! C ABI over `hiant`.
//!
//! Every function returns a [`HiantStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`hiant_last_error`]. Corpora and models are opaque handles that the caller
//! releases with the matching `_free` function.
//!
//! Buffers are caller-owned. Matrices are row-major `f64`; labels are `size_t`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use hiant::cli::load_run_model;
use hiant::datasets::{generate_corpus, read_corpus, write_corpus, Corpus, CorpusSpec};
use hiant::evaluation::moc_accuracy;
use hiant::finegrained::{form_clusters, inter_loss, intra_loss, tcl_loss, TclWeights};
use hiant::manifest::RunManifest;
use hiant::training::lr_schedule;
use hiant::{Dims, Error, Mat, Model, TrainConfig};
use libc::{c_char, size_t};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HiantStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Shape = 4,
    LabelOutOfRange = 5,
    EmptyInput = 6,
    Io = 7,
    Parse = 8,
    MissingCheckpoint = 9,
    Checkpoint = 10,
    CorruptCorpus = 11,
    BufferTooSmall = 12,
    Panic = 13,
    Internal = 14,
}

/// A loaded or generated corpus.
pub struct HiantCorpus {
    inner: Corpus,
}

/// A trained model restored from a run directory.
pub struct HiantModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(HiantStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidSpec(_) | Error::InvalidConfig(_) | Error::EpochOutOfRange { .. } => HiantStatus::InvalidConfig,
            Error::Shape { .. } | Error::LengthMismatch(..) | Error::VideoShorterThanStride { .. } | Error::SequenceTooLong { .. } => {
                HiantStatus::Shape
            }
            Error::LabelOutOfRange { .. } => HiantStatus::LabelOutOfRange,
            Error::EmptyHorizon | Error::EmptyCorpus => HiantStatus::EmptyInput,
            Error::Io { .. } | Error::WouldClobber(_) => HiantStatus::Io,
            Error::Json { .. } | Error::Parse { .. } | Error::Csv(_) => HiantStatus::Parse,
            Error::MissingCheckpoint(_) => HiantStatus::MissingCheckpoint,
            Error::Checkpoint(_) => HiantStatus::Checkpoint,
            Error::CorruptVideo { .. } => HiantStatus::CorruptCorpus,
            _ => HiantStatus::Internal,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: HiantStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HiantStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HiantStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            HiantStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return fail(HiantStatus::NullPointer, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(HiantStatus::InvalidArgument, format!("{what} is not valid UTF-8")),
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(HiantStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(HiantStatus::NullPointer, format!("{what} is null")))
}

unsafe fn corpus_ref<'a>(c: *const HiantCorpus) -> Result<&'a Corpus, Fail> {
    c.as_ref()
        .map(|c| &c.inner)
        .ok_or_else(|| Fail(HiantStatus::NullPointer, "corpus is null".into()))
}

unsafe fn model_ref<'a>(m: *const HiantModel) -> Result<&'a Model, Fail> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| Fail(HiantStatus::NullPointer, "model is null".into()))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hiant_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hiant_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a synthetic corpus. `spec_toml` may be null for the defaults.
///
/// # Safety
/// `spec_toml` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_generate(spec_toml: *const c_char, out: *mut *mut HiantCorpus) -> HiantStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec = if spec_toml.is_null() {
            CorpusSpec::default()
        } else {
            let text = CStr::from_ptr(spec_toml)
                .to_str()
                .map_err(|_| Fail(HiantStatus::InvalidArgument, "spec is not valid UTF-8".into()))?;
            toml::from_str(text).map_err(|e| Fail(HiantStatus::Parse, e.to_string()))?
        };
        let corpus = generate_corpus(&spec)?;
        *out = Box::into_raw(Box::new(HiantCorpus { inner: corpus }));
        Ok(())
    })
}

/// # Safety
/// `dir` is a NUL-terminated path; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_read(dir: *const c_char, out: *mut *mut HiantCorpus) -> HiantStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let corpus = read_corpus(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(HiantCorpus { inner: corpus }));
        Ok(())
    })
}

/// # Safety
/// `corpus` is a live handle; `dir` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_write(corpus: *const HiantCorpus, dir: *const c_char) -> HiantStatus {
    guard(|| {
        let c = corpus_ref(corpus)?;
        write_corpus(c, &path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `corpus` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_free(corpus: *mut HiantCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of videos, fine classes, coarse classes and feature width.
///
/// # Safety
/// `corpus` is a live handle; each out pointer is null or writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_shape(
    corpus: *const HiantCorpus,
    n_videos: *mut size_t,
    n_fine: *mut size_t,
    n_coarse: *mut size_t,
    feature_dim: *mut size_t,
) -> HiantStatus {
    guard(|| {
        let c = corpus_ref(corpus)?;
        for (p, v) in [
            (n_videos, c.len()),
            (n_fine, c.n_fine),
            (n_coarse, c.n_coarse),
            (feature_dim, c.feature_dim),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Frame count of video `index`.
///
/// # Safety
/// `corpus` is a live handle; `frames` is writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_video_frames(corpus: *const HiantCorpus, index: size_t, frames: *mut size_t) -> HiantStatus {
    guard(|| {
        let c = corpus_ref(corpus)?;
        let out = out_arg(frames, "frames")?;
        let v = c
            .videos
            .get(index)
            .ok_or_else(|| Fail(HiantStatus::InvalidArgument, format!("video index {index} out of range")))?;
        *out = v.frames();
        Ok(())
    })
}

/// Copies the `frames × feature_dim` features of video `index` into `buf`.
///
/// # Safety
/// `corpus` is a live handle; `buf` holds `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_video_features(
    corpus: *const HiantCorpus,
    index: size_t,
    buf: *mut f64,
    len: size_t,
) -> HiantStatus {
    guard(|| {
        let c = corpus_ref(corpus)?;
        let v = c
            .videos
            .get(index)
            .ok_or_else(|| Fail(HiantStatus::InvalidArgument, format!("video index {index} out of range")))?;
        let data = v.features.values.data();
        if len < data.len() {
            return fail(HiantStatus::BufferTooSmall, format!("need {} doubles, got {len}", data.len()));
        }
        if buf.is_null() {
            return fail(HiantStatus::NullPointer, "buf is null");
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Copies the per-frame fine labels of video `index` into `buf`.
///
/// # Safety
/// `corpus` is a live handle; `buf` holds `len` elements.
#[no_mangle]
pub unsafe extern "C" fn hiant_corpus_video_fine_labels(
    corpus: *const HiantCorpus,
    index: size_t,
    buf: *mut size_t,
    len: size_t,
) -> HiantStatus {
    guard(|| {
        let c = corpus_ref(corpus)?;
        let v = c
            .videos
            .get(index)
            .ok_or_else(|| Fail(HiantStatus::InvalidArgument, format!("video index {index} out of range")))?;
        let labels = v.labels.fine_per_frame();
        if len < labels.len() {
            return fail(HiantStatus::BufferTooSmall, format!("need {} labels, got {len}", labels.len()));
        }
        if buf.is_null() {
            return fail(HiantStatus::NullPointer, "buf is null");
        }
        ptr::copy_nonoverlapping(labels.as_ptr(), buf, labels.len());
        Ok(())
    })
}

/// Learning rate at fractional `epoch` under the default training schedule.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_lr_schedule(epoch: f64, out: *mut f64) -> HiantStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = lr_schedule(epoch, &TrainConfig::default())?;
        Ok(())
    })
}

/// Mean-over-classes accuracy of `pred` against `truth`.
///
/// # Safety
/// `pred` and `truth` hold `len` labels; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_moc_accuracy(
    pred: *const size_t,
    truth: *const size_t,
    len: size_t,
    n_classes: size_t,
    out: *mut f64,
) -> HiantStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = slice_arg(pred, len, "pred")?;
        let t = slice_arg(truth, len, "truth")?;
        *out = moc_accuracy(p, t, n_classes)?;
        Ok(())
    })
}

/// Temporal consistency losses of a `rows × cols` feature matrix whose rows
/// carry `labels`. Any of the out pointers may be null.
///
/// # Safety
/// `features` holds `rows · cols` doubles, `labels` holds `rows` labels.
#[no_mangle]
pub unsafe extern "C" fn hiant_tcl_losses(
    features: *const f64,
    rows: size_t,
    cols: size_t,
    labels: *const size_t,
    lambda_intra: f64,
    lambda_inter: f64,
    intra: *mut f64,
    inter: *mut f64,
    total: *mut f64,
) -> HiantStatus {
    guard(|| {
        if rows == 0 || cols == 0 {
            return fail(HiantStatus::EmptyInput, "feature matrix is empty");
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(HiantStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let x = Mat::from_vec(rows, cols, slice_arg(features, n, "features")?.to_vec());
        let clusters = form_clusters(slice_arg(labels, rows, "labels")?);
        let w = TclWeights {
            lambda_intra,
            lambda_inter,
        };
        if let Some(p) = intra.as_mut() {
            *p = intra_loss(&x, &clusters);
        }
        if let Some(p) = inter.as_mut() {
            *p = inter_loss(&x, &clusters);
        }
        if let Some(p) = total.as_mut() {
            *p = tcl_loss(&x, &clusters, w);
        }
        Ok(())
    })
}

fn load_model(run: &Path, seed: u64) -> Result<Model, Fail> {
    let m = RunManifest::read(run)?;
    let cfg = match m.config {
        Some(c) => c,
        None => return fail(HiantStatus::Parse, "run manifest has no config"),
    };
    let corpus = read_corpus(&m.corpus_path)?;
    Ok(load_run_model(run, &cfg, Dims::of(&corpus), seed)?)
}

/// Restores the final checkpoint of `seed` from a training run directory.
///
/// # Safety
/// `run_dir` is a NUL-terminated path; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_model_load(run_dir: *const c_char, seed: u64, out: *mut *mut HiantModel) -> HiantStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = load_model(&path_arg(run_dir, "run_dir")?, seed)?;
        *out = Box::into_raw(Box::new(HiantModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hiant_model_free(model: *mut HiantModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature width the model expects and the number of fine classes it predicts.
///
/// # Safety
/// `model` is a live handle; each out pointer is null or writable.
#[no_mangle]
pub unsafe extern "C" fn hiant_model_dims(model: *const HiantModel, feature_dim: *mut size_t, n_fine: *mut size_t) -> HiantStatus {
    guard(|| {
        let m = model_ref(model)?;
        if let Some(p) = feature_dim.as_mut() {
            *p = m.dims.feature_dim;
        }
        if let Some(p) = n_fine.as_mut() {
            *p = m.dims.n_fine;
        }
        Ok(())
    })
}

/// Predicts `horizon` future fine labels from `frames × feature_dim` observed
/// features and writes them to `out_labels`.
///
/// # Safety
/// `model` is a live handle; `features` holds `frames · feature_dim` doubles;
/// `out_labels` holds `horizon` elements.
#[no_mangle]
pub unsafe extern "C" fn hiant_model_predict(
    model: *const HiantModel,
    features: *const f64,
    frames: size_t,
    feature_dim: size_t,
    horizon: size_t,
    out_labels: *mut size_t,
) -> HiantStatus {
    guard(|| {
        let m = model_ref(model)?;
        if feature_dim != m.dims.feature_dim {
            return fail(
                HiantStatus::Shape,
                format!("model expects {} features per frame, got {feature_dim}", m.dims.feature_dim),
            );
        }
        let n = frames
            .checked_mul(feature_dim)
            .ok_or_else(|| Fail(HiantStatus::InvalidArgument, "frames * feature_dim overflows".into()))?;
        if n == 0 {
            return fail(HiantStatus::EmptyInput, "no observed frames");
        }
        if out_labels.is_null() {
            return fail(HiantStatus::NullPointer, "out_labels is null");
        }
        let observed = Mat::from_vec(frames, feature_dim, slice_arg(features, n, "features")?.to_vec());
        let pred = m.predict(&observed, horizon)?;
        ptr::copy_nonoverlapping(pred.future.expanded.as_ptr(), out_labels, horizon);
        Ok(())
    })
}
