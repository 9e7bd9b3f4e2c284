//! Synthetic hierarchical activity corpora.
//!
//! Each video is a Markov walk over fine labels with geometric segment
//! durations. Frame features are a per-fine-class base mean plus a drift that
//! grows linearly with the absolute frame index, plus Gaussian noise, so the
//! same fine class seen at distant times lands in displaced regions of feature
//! space.
//!
//! On disk a corpus is a directory holding `manifest.json` (class counts,
//! fine→coarse map, per-video segment tuples) and `features/<video_id>.f32`
//! with raw little-endian `f32`, row-major `T × C`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::tensor::Mat;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_DIR: &str = "features";
const MANIFEST_VERSION: u32 = 1;
const MIN_SEGMENT_LEN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSegment {
    pub coarse_id: usize,
    pub fine_id: usize,
    /// Inclusive.
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl LabelSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Segments tiling `[0, frames)` with maximal fine-label runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTimeline {
    segments: Vec<LabelSegment>,
    frames: usize,
}

impl LabelTimeline {
    /// Validates tiling and maximality.
    pub fn new(segments: Vec<LabelSegment>, frames: usize) -> Result<Self> {
        let mut cursor = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.start != cursor || s.end <= s.start {
                return Err(Error::InvalidSpec(format!(
                    "segment {i} [{}, {}) does not continue the tiling at frame {cursor}",
                    s.start, s.end
                )));
            }
            if i > 0 && segments[i - 1].fine_id == s.fine_id {
                return Err(Error::InvalidSpec(format!(
                    "segments {} and {i} share fine label {} (runs must be maximal)",
                    i - 1,
                    s.fine_id
                )));
            }
            cursor = s.end;
        }
        if cursor != frames {
            return Err(Error::InvalidSpec(format!(
                "segments cover {cursor} frames, timeline has {frames}"
            )));
        }
        Ok(LabelTimeline { segments, frames })
    }

    /// Run-length encodes per-frame fine labels.
    pub fn from_fine_labels(fine: &[usize], fine_to_coarse: &[usize]) -> Self {
        let mut segments: Vec<LabelSegment> = Vec::new();
        for (t, &f) in fine.iter().enumerate() {
            match segments.last_mut() {
                Some(last) if last.fine_id == f => last.end = t + 1,
                _ => segments.push(LabelSegment {
                    coarse_id: fine_to_coarse[f],
                    fine_id: f,
                    start: t,
                    end: t + 1,
                }),
            }
        }
        LabelTimeline {
            segments,
            frames: fine.len(),
        }
    }

    pub fn segments(&self) -> &[LabelSegment] {
        &self.segments
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn fine_per_frame(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.frames);
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.fine_id, s.len()));
        }
        out
    }

    pub fn coarse_per_frame(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.frames);
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.coarse_id, s.len()));
        }
        out
    }

    /// The timeline restricted to `[start, end)`, re-indexed from 0.
    pub fn slice(&self, start: usize, end: usize) -> LabelTimeline {
        assert!(start < end && end <= self.frames, "LabelTimeline::slice out of range");
        let segments = self
            .segments
            .iter()
            .filter(|s| s.end > start && s.start < end)
            .map(|s| LabelSegment {
                coarse_id: s.coarse_id,
                fine_id: s.fine_id,
                start: s.start.max(start) - start,
                end: s.end.min(end) - start,
            })
            .collect();
        LabelTimeline {
            segments,
            frames: end - start,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    /// `T × C`.
    pub values: Mat,
}

impl FrameFeatureSequence {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub features: FrameFeatureSequence,
    pub labels: LabelTimeline,
}

impl Video {
    pub fn id(&self) -> &str {
        &self.features.video_id
    }

    pub fn frames(&self) -> usize {
        self.labels.frames()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub feature_dim: usize,
    pub fine_to_coarse: Vec<usize>,
    pub videos: Vec<Video>,
}

impl Corpus {
    pub fn empty(n_coarse: usize, n_fine: usize, feature_dim: usize, fine_to_coarse: Vec<usize>) -> Self {
        Corpus {
            n_coarse,
            n_fine,
            feature_dim,
            fine_to_coarse,
            videos: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// A corpus sharing this one's vocabulary but holding only `indices`.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            videos: indices.iter().map(|&i| self.videos[i].clone()).collect(),
            ..Corpus::empty(
                self.n_coarse,
                self.n_fine,
                self.feature_dim,
                self.fine_to_coarse.clone(),
            )
        }
    }

    /// Seeded 80/20 split by video; returns `(train, held_out)` indices.
    pub fn split_indices(&self, held_out_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_test = ((self.len() as f64) * held_out_fraction).round() as usize;
        let n_test = n_test.min(self.len());
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        (train, test)
    }
}

fn default_mean_segment_len() -> f64 {
    40.0
}

fn default_script_prob() -> f64 {
    0.9
}

/// Generator parameters. `transition_matrix` may be omitted in spec files, in
/// which case a scripted matrix is built: each fine class moves to a fixed
/// successor with probability `script_prob`, otherwise uniformly to any other
/// class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_videos: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    #[serde(default)]
    pub fine_to_coarse: Option<Vec<usize>>,
    pub feature_dim: usize,
    pub mean_video_len: f64,
    #[serde(default = "default_mean_segment_len")]
    pub mean_segment_len: f64,
    pub drift_rate: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub transition_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_script_prob")]
    pub script_prob: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    /// 60 videos, 6 coarse / 12 fine classes, 16-d features, ~200 frames.
    fn default() -> Self {
        CorpusSpec {
            n_videos: 60,
            n_coarse: 6,
            n_fine: 12,
            fine_to_coarse: None,
            feature_dim: 16,
            mean_video_len: 200.0,
            mean_segment_len: default_mean_segment_len(),
            drift_rate: 0.02,
            noise_std: 1.0,
            transition_matrix: None,
            script_prob: default_script_prob(),
            seed: 7,
        }
    }
}

impl CorpusSpec {
    /// Fine classes split evenly across coarse classes, in order.
    pub fn fine_to_coarse(&self) -> Vec<usize> {
        self.fine_to_coarse.clone().unwrap_or_else(|| {
            (0..self.n_fine)
                .map(|f| f * self.n_coarse / self.n_fine.max(1))
                .collect()
        })
    }

    /// Fixed successor of each fine class: the next sub-action of the same
    /// coarse activity, or the first sub-action of the next activity.
    pub fn scripted_successors(&self) -> Vec<usize> {
        let map = self.fine_to_coarse();
        (0..self.n_fine)
            .map(|f| {
                let next = (f + 1) % self.n_fine;
                if next != f && map[next] == map[f] {
                    next
                } else {
                    let next_coarse = (map[f] + 1) % self.n_coarse;
                    map.iter().position(|&c| c == next_coarse).unwrap_or(next)
                }
            })
            .collect()
    }

    pub fn transitions(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.transition_matrix {
            return m.clone();
        }
        let n = self.n_fine;
        if n == 1 {
            return vec![vec![1.0]];
        }
        let succ = self.scripted_successors();
        (0..n)
            .map(|f| {
                let mut row = vec![0.0; n];
                let others = n - 1;
                if succ[f] == f || others == 1 {
                    for (j, r) in row.iter_mut().enumerate() {
                        if j != f {
                            *r = 1.0 / others as f64;
                        }
                    }
                } else {
                    let rest = (1.0 - self.script_prob) / (others - 1) as f64;
                    for (j, r) in row.iter_mut().enumerate() {
                        if j == succ[f] {
                            *r = self.script_prob;
                        } else if j != f {
                            *r = rest;
                        }
                    }
                }
                row
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_coarse == 0 {
            return bad("n_coarse must be at least 1".into());
        }
        if self.n_fine == 0 {
            return bad("n_fine must be at least 1".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if !(self.mean_video_len.is_finite() && self.mean_video_len >= 2.0 * MIN_SEGMENT_LEN as f64) {
            return bad(format!(
                "mean_video_len must be at least {} frames",
                2 * MIN_SEGMENT_LEN
            ));
        }
        if !(self.mean_segment_len.is_finite() && self.mean_segment_len >= 1.0) {
            return bad("mean_segment_len must be >= 1".into());
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return bad("drift_rate must be finite and >= 0".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return bad("noise_std must be finite and > 0".into());
        }
        if !(0.0..=1.0).contains(&self.script_prob) {
            return bad("script_prob must lie in [0, 1]".into());
        }
        let map = self.fine_to_coarse();
        if map.len() != self.n_fine {
            return bad(format!(
                "fine_to_coarse has {} entries, expected one per fine class ({})",
                map.len(),
                self.n_fine
            ));
        }
        if let Some((f, &c)) = map.iter().enumerate().find(|(_, &c)| c >= self.n_coarse) {
            return bad(format!(
                "fine_to_coarse maps fine {f} to coarse {c}, but n_coarse = {}",
                self.n_coarse
            ));
        }
        let tm = self.transitions();
        if tm.len() != self.n_fine || tm.iter().any(|r| r.len() != self.n_fine) {
            return bad(format!("transition_matrix must be {0}x{0}", self.n_fine));
        }
        for (i, row) in tm.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return bad(format!("transition_matrix row {i} has a negative or non-finite entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("transition_matrix row {i} sums to {s}, not 1"));
            }
        }
        Ok(())
    }
}

fn video_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 over (seed, index)
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-fine-class base means (`n_fine × C`) and unit drift directions.
pub fn class_geometry(spec: &CorpusSpec) -> (Mat, Mat) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.feature_dim;
    let mut means = Mat::zeros(spec.n_fine, c);
    for v in means.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let mut dirs = Mat::zeros(spec.n_fine, c);
    for f in 0..spec.n_fine {
        let row = dirs.row_mut(f);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    (means, dirs)
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn generate_video(spec: &CorpusSpec, index: usize, means: &Mat, dirs: &Mat, tm: &[Vec<f64>], map: &[usize]) -> Video {
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(spec.seed, index));
    let scale: f64 = rng.random_range(0.8..1.2);
    let frames = ((spec.mean_video_len * scale).round() as usize).max(2 * MIN_SEGMENT_LEN);
    let max_seg = (frames / 2).max(MIN_SEGMENT_LEN);
    let geom = Geometric::new(1.0 / spec.mean_segment_len).expect("mean_segment_len >= 1");

    let mut fine = Vec::with_capacity(frames);
    let mut label = rng.random_range(0..spec.n_fine);
    while fine.len() < frames {
        let dur = (1 + geom.sample(&mut rng) as usize).clamp(MIN_SEGMENT_LEN, max_seg);
        let take = dur.min(frames - fine.len());
        fine.extend(std::iter::repeat_n(label, take));
        label = sample_categorical(&tm[label], &mut rng);
    }

    let c = spec.feature_dim;
    let mut values = Mat::zeros(frames, c);
    for (t, &f) in fine.iter().enumerate() {
        let base = means.row(f);
        let dir = dirs.row(f);
        let drift = spec.drift_rate * t as f64;
        for (j, v) in values.row_mut(t).iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let x = base[j] + drift * dir[j] + spec.noise_std * noise;
            *v = x as f32 as f64;
        }
    }

    Video {
        features: FrameFeatureSequence {
            video_id: format!("video-{index:04}"),
            values,
        },
        labels: LabelTimeline::from_fine_labels(&fine, map),
    }
}

/// Deterministic in `spec` (including its seed). Videos are generated in
/// parallel, each from its own sub-seed.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let (means, dirs) = class_geometry(spec);
    let tm = spec.transitions();
    let map = spec.fine_to_coarse();
    let videos = (0..spec.n_videos)
        .into_par_iter()
        .map(|i| generate_video(spec, i, &means, &dirs, &tm, &map))
        .collect();
    Ok(Corpus {
        n_coarse: spec.n_coarse,
        n_fine: spec.n_fine,
        feature_dim: spec.feature_dim,
        fine_to_coarse: map,
        videos,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestVideo {
    video_id: String,
    frames: usize,
    feature_dim: usize,
    features: String,
    /// `(coarse_id, fine_id, start, end)`.
    segments: Vec<(usize, usize, usize, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusManifest {
    version: u32,
    n_coarse: usize,
    n_fine: usize,
    feature_dim: usize,
    fine_to_coarse: Vec<usize>,
    videos: Vec<ManifestVideo>,
}

/// Writes the manifest and one feature file per video; returns the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    let feat_dir = dir.join(FEATURES_DIR);
    fs::create_dir_all(&feat_dir).at(&feat_dir)?;
    let mut videos = Vec::with_capacity(corpus.len());
    for v in &corpus.videos {
        let rel = format!("{FEATURES_DIR}/{}.f32", v.id());
        let mut bytes = Vec::with_capacity(v.features.values.len() * 4);
        for &x in v.features.values.data() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let path = dir.join(&rel);
        fs::write(&path, bytes).at(&path)?;
        videos.push(ManifestVideo {
            video_id: v.id().to_string(),
            frames: v.frames(),
            feature_dim: v.features.values.cols(),
            features: rel,
            segments: v
                .labels
                .segments()
                .iter()
                .map(|s| (s.coarse_id, s.fine_id, s.start, s.end))
                .collect(),
        });
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        n_coarse: corpus.n_coarse,
        n_fine: corpus.n_fine,
        feature_dim: corpus.feature_dim,
        fine_to_coarse: corpus.fine_to_coarse.clone(),
        videos,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).at(&path)?;
    Ok(path)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            path,
            message: format!("unsupported manifest version {}", manifest.version),
        });
    }
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for mv in manifest.videos {
        let corrupt = |reason: String| Error::CorruptVideo {
            video_id: mv.video_id.clone(),
            reason,
        };
        let fpath = dir.join(&mv.features);
        let bytes = fs::read(&fpath).map_err(|e| corrupt(format!("{}: {e}", fpath.display())))?;
        let expected = mv.frames * mv.feature_dim * 4;
        if bytes.len() != expected {
            return Err(corrupt(format!(
                "feature file has {} bytes, manifest implies {} ({} x {} f32)",
                bytes.len(),
                expected,
                mv.frames,
                mv.feature_dim
            )));
        }
        if mv.feature_dim != manifest.feature_dim {
            return Err(corrupt(format!(
                "feature width {} differs from corpus width {}",
                mv.feature_dim, manifest.feature_dim
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let segments = mv
            .segments
            .iter()
            .map(|&(coarse_id, fine_id, start, end)| LabelSegment {
                coarse_id,
                fine_id,
                start,
                end,
            })
            .collect();
        let labels = LabelTimeline::new(segments, mv.frames).map_err(|e| corrupt(e.to_string()))?;
        videos.push(Video {
            features: FrameFeatureSequence {
                video_id: mv.video_id.clone(),
                values: Mat::from_vec(mv.frames, mv.feature_dim, data),
            },
            labels,
        });
    }
    Ok(Corpus {
        n_coarse: manifest.n_coarse,
        n_fine: manifest.n_fine,
        feature_dim: manifest.feature_dim,
        fine_to_coarse: manifest.fine_to_coarse,
        videos,
    })
}

/// `⌈rate · frames⌉`, tolerant of representation error in `rate`.
pub fn window_len(rate: f64, frames: usize) -> usize {
    let x = rate * frames as f64;
    (x - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnticipationSample {
    pub video_index: usize,
    pub video_id: String,
    /// Total frames of the source video.
    pub frames: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Features over `[0, ⌈αT⌉)`.
    pub observed: FrameFeatureSequence,
    pub observed_labels: LabelTimeline,
    /// Fine label per frame over `[⌈αT⌉, ⌈αT⌉ + ⌈βT⌉)`.
    pub future_labels: Vec<usize>,
}

impl AnticipationSample {
    pub fn observed_len(&self) -> usize {
        self.observed.frames()
    }

    pub fn horizon(&self) -> usize {
        self.future_labels.len()
    }
}

/// Observed/future windows `(⌈αT⌉, ⌈βT⌉)` for one video, or `None` when they
/// do not fit.
pub fn sample_windows(frames: usize, alpha: f64, beta: f64) -> Option<(usize, usize)> {
    let obs = window_len(alpha, frames);
    let fut = window_len(beta, frames);
    (obs >= 1 && fut >= 1 && obs + fut <= frames).then_some((obs, fut))
}

pub fn make_sample(corpus: &Corpus, index: usize, alpha: f64, beta: f64) -> Option<AnticipationSample> {
    let v = &corpus.videos[index];
    let (obs, fut) = sample_windows(v.frames(), alpha, beta)?;
    let fine = v.labels.fine_per_frame();
    Some(AnticipationSample {
        video_index: index,
        video_id: v.id().to_string(),
        frames: v.frames(),
        alpha,
        beta,
        observed: FrameFeatureSequence {
            video_id: v.id().to_string(),
            values: v.features.values.slice_rows(0, obs),
        },
        observed_labels: v.labels.slice(0, obs),
        future_labels: fine[obs..obs + fut].to_vec(),
    })
}

/// One sample per eligible video plus the number of skipped videos.
pub fn make_samples(corpus: &Corpus, alpha: f64, beta: f64) -> (Vec<AnticipationSample>, usize) {
    let samples: Vec<_> = (0..corpus.len())
        .filter_map(|i| make_sample(corpus, i, alpha, beta))
        .collect();
    let skipped = corpus.len() - samples.len();
    (samples, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_videos: 4,
            mean_video_len: 60.0,
            mean_segment_len: 8.0,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn timelines_tile_and_are_maximal() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        for v in &corpus.videos {
            let rebuilt = LabelTimeline::new(v.labels.segments().to_vec(), v.frames()).unwrap();
            assert_eq!(rebuilt, v.labels);
            assert_eq!(v.features.frames(), v.frames());
            for s in v.labels.segments() {
                assert_eq!(corpus.fine_to_coarse[s.fine_id], s.coarse_id);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small_spec()).unwrap();
        let b = generate_corpus(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusSpec {
            seed: 8,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_noiseless_class_repeats_its_mean() {
        let spec = CorpusSpec {
            n_videos: 2,
            n_coarse: 1,
            n_fine: 1,
            drift_rate: 0.0,
            noise_std: 1e-12,
            ..small_spec()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let (means, _) = class_geometry(&spec);
        for v in &corpus.videos {
            assert_eq!(v.labels.segments().len(), 1);
            for t in 0..v.frames() {
                for (x, m) in v.features.values.row(t).iter().zip(means.row(0)) {
                    assert!((x - m).abs() < 1e-6, "{x} vs {m}");
                }
            }
        }
    }

    #[test]
    fn spec_validation_names_the_field() {
        let mut spec = small_spec();
        spec.transition_matrix = Some(vec![vec![0.5; 12]; 12]);
        let err = generate_corpus(&spec).unwrap_err().to_string();
        assert!(err.contains("transition_matrix row 0"), "{err}");

        let spec = CorpusSpec {
            fine_to_coarse: Some(vec![0; 11]),
            ..small_spec()
        };
        assert!(spec.validate().unwrap_err().to_string().contains("fine_to_coarse"));

        let spec = CorpusSpec {
            noise_std: 0.0,
            ..small_spec()
        };
        assert!(spec.validate().unwrap_err().to_string().contains("noise_std"));
    }

    #[test]
    fn scripted_transitions_are_stochastic() {
        let spec = CorpusSpec::default();
        for row in spec.transitions() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let succ = spec.scripted_successors();
        assert_eq!(succ[0], 1);
        assert_eq!(succ[1], 2);
        assert_eq!(succ[11], 0);
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(sample_windows(100, 0.2, 0.5), Some((20, 50)));
        assert_eq!(sample_windows(10, 0.3, 0.5), Some((3, 5)));
        assert_eq!(sample_windows(100, 0.9, 0.5), None);
        assert_eq!(sample_windows(7, 0.1, 0.1), Some((1, 1)));
    }

    #[test]
    fn samples_are_adjacent_windows() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let (samples, skipped) = make_samples(&corpus, 0.3, 0.5);
        assert_eq!(skipped, 0);
        for s in &samples {
            let v = &corpus.videos[s.video_index];
            let fine = v.labels.fine_per_frame();
            let obs = s.observed_len();
            assert_eq!(s.observed_labels.fine_per_frame(), fine[..obs]);
            assert_eq!(s.future_labels, fine[obs..obs + s.horizon()]);
            assert_eq!(s.observed.values, v.features.values.slice_rows(0, obs));
        }
        let (none, skipped) = make_samples(&corpus, 0.9, 0.5);
        assert!(none.is_empty());
        assert_eq!(skipped, corpus.len());
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let corpus = generate_corpus(&CorpusSpec {
            n_videos: 10,
            ..small_spec()
        })
        .unwrap();
        let (train, test) = corpus.split_indices(0.2, 3);
        assert_eq!(test.len(), 2);
        assert_eq!(train.len(), 8);
        assert!(test.iter().all(|i| !train.contains(i)));
        assert_eq!(corpus.split_indices(0.2, 3), (train, test));
    }
}
