#![allow(dead_code)]

use hiant::{Config, CorpusSpec};

pub const TINY_SPEC: &str = r#"
n_videos = 8
n_coarse = 3
n_fine = 6
feature_dim = 6
mean_video_len = 60.0
mean_segment_len = 10.0
drift_rate = 0.02
noise_std = 1.0
seed = 5
"#;

pub const TINY_CONFIG: &str = r#"
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
held_out_fraction = 0.25
"#;

pub fn tiny_spec() -> CorpusSpec {
    toml::from_str(TINY_SPEC).unwrap()
}

pub fn tiny_config() -> Config {
    Config::from_toml(TINY_CONFIG).unwrap()
}
