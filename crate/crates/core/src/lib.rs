//! Multi-level action anticipation from frame features.
//!
//! Pipeline: stride sampling and a linear encoder produce tokens; a
//! transformer stack segments the observed frames into coarse actions; a
//! separately trained generator predicts fine-grained labels under a
//! temporal consistency loss; a fusion layer mixes video tokens, pooled
//! fine-label embeddings and embedded coarse labels; a set of learned
//! queries decodes future fine actions and their relative durations.

pub mod anticipation;
pub mod attention;
pub mod autograd;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod finegrained;
pub mod gradcheck;
pub mod manifest;
pub mod model;
pub mod optim;
pub mod params;
pub mod segmentation;
pub mod tensor;
pub mod training;

pub use config::{Config, ModelConfig, ProtocolSpec, Stage, TrainConfig, Variant};
pub use datasets::{Corpus, CorpusSpec};
pub use error::{Error, Result};
pub use model::{Dims, Model, Prediction};
pub use tensor::Mat;
