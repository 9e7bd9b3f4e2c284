//! Command implementations behind the `hiant` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Config, ProtocolSpec, Variant};
use crate::datasets::{generate_corpus, read_corpus, write_corpus, Corpus, CorpusSpec};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{chance_levels, run_ablation, run_protocol, write_ablation, write_report, ProtocolReport};
use crate::gradcheck::{run_scope, SCOPES};
use crate::manifest::{prepare_out_dir, ArtifactKind, RunManifest};
use crate::model::{Dims, Model};
use crate::params::{read_checkpoint, write_checkpoint};
use crate::training::{final_checkpoint, seed_dir, train, write_outcome};

#[derive(Debug, Parser)]
#[command(name = "hiant", version, about = "Multi-level action anticipation on frame features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    GenData {
        /// Corpus spec (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Train one model per seed.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds to train; defaults to the config's list.
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Score a trained run over the observation/prediction-rate grid.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        protocol: Option<PathBuf>,
        /// Output directory; defaults to `<run>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train and score the ablation variants under one config.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        protocol: Option<PathBuf>,
        /// Comma-separated subset of unimodal, multimodal, no_multilevel, multilevel.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData {
            config,
            out,
            seed,
            force,
        } => {
            let spec = load_corpus_spec(config.as_deref(), seed)?;
            let hash = cmd_gen_data(&spec, &out, force)?;
            println!("wrote {} videos to {} (sha256 {hash})", spec.n_videos, out.display());
        }
        Command::Train {
            config,
            corpus,
            out,
            seed,
            force,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seeds = if seed.is_empty() { cfg.train.seeds.clone() } else { seed };
            cmd_train(&cfg, &corpus, &out, &seeds, force)?;
        }
        Command::Eval {
            run,
            protocol,
            out,
            force,
        } => {
            let spec = load_protocol(protocol.as_deref())?;
            let out = out.unwrap_or_else(|| run.join("eval"));
            let report = cmd_eval(&run, &spec, &out, force)?;
            for s in &report.summary {
                println!("alpha {:<4} beta {:<4} MoC {:.4}", s.alpha, s.beta, s.mean_moc);
            }
        }
        Command::Ablate {
            config,
            corpus,
            out,
            protocol,
            variants,
            force,
        } => {
            let cfg = load_config(config.as_deref())?;
            let spec = load_protocol(protocol.as_deref())?;
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants
                    .iter()
                    .map(|v| Variant::parse(v).ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{v}`"))))
                    .collect::<Result<_>>()?
            };
            cmd_ablate(&cfg, &corpus, &out, &spec, &variants, force)?;
        }
        Command::Gradcheck { scope, seed } => {
            let Some(results) = run_scope(&scope, seed) else {
                return Err(Error::InvalidConfig(format!(
                    "unknown scope `{scope}`; expected one of {}",
                    SCOPES.join(", ")
                )));
            };
            let mut ok = true;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!(
                    "{:<28} max rel err {:.3e}  (tol {:.0e}, {} entries)  {status}",
                    r.name, r.max_rel_err, r.tolerance, r.entries
                );
                ok &= r.passed();
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_err(path: &Path, e: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn load_corpus_spec(path: Option<&Path>, seed: Option<u64>) -> Result<CorpusSpec> {
    let mut spec = match path {
        Some(p) => {
            let text = fs::read_to_string(p).at(p)?;
            toml::from_str(&text).map_err(|e| parse_err(p, e))?
        }
        None => CorpusSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

pub fn load_protocol(path: Option<&Path>) -> Result<ProtocolSpec> {
    match path {
        Some(p) => ProtocolSpec::load(p),
        None => Ok(ProtocolSpec::default()),
    }
}

/// Writes the corpus and its manifest; returns the content hash.
pub fn cmd_gen_data(spec: &CorpusSpec, out: &Path, force: bool) -> Result<String> {
    spec.validate()?;
    prepare_out_dir(out, force)?;
    let corpus = generate_corpus(spec)?;
    write_corpus(&corpus, out)?;
    let mut m = RunManifest::new(ArtifactKind::Corpus, out, vec![spec.seed])?;
    m.corpus_spec = Some(spec.clone());
    m.write(out)?;
    Ok(m.corpus_sha256)
}

fn load_corpus_checked(dir: &Path) -> Result<Corpus> {
    if !dir.join(crate::datasets::MANIFEST_FILE).exists() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no corpus found"),
        });
    }
    read_corpus(dir)
}

pub fn cmd_train(cfg: &Config, corpus_dir: &Path, out: &Path, seeds: &[u64], force: bool) -> Result<()> {
    cfg.validate()?;
    let corpus = load_corpus_checked(corpus_dir)?;
    prepare_out_dir(out, force)?;
    let mut m = RunManifest::new(ArtifactKind::Train, corpus_dir, seeds.to_vec())?;
    m.config = Some(cfg.clone());
    m.write(out)?;
    let chance = chance_levels(&corpus);
    for &seed in seeds {
        let outcome = train(&corpus, cfg, seed)?;
        write_outcome(&outcome, &cfg.train, &seed_dir(out, seed))?;
        if let Some(last) = outcome.trace.last() {
            print!("seed {seed}: final loss {:.4}", last.loss_total);
            if let (Some(acc), Some(moc)) = (last.held_out_seg_acc, last.held_out_moc) {
                print!(
                    ", held-out seg acc {acc:.3} (chance {:.3}), MoC {moc:.3} (chance {:.3})",
                    chance.segmentation, chance.moc
                );
            }
            println!();
        }
    }
    Ok(())
}

/// Loads the model of one seed from a training run directory.
pub fn load_run_model(run: &Path, cfg: &Config, dims: Dims, seed: u64) -> Result<Model> {
    let path = final_checkpoint(&seed_dir(run, seed), &cfg.train);
    if !path.exists() {
        return Err(Error::MissingCheckpoint(vec![path]));
    }
    let mut model = Model::init(cfg.model.clone(), dims, cfg.train.variant, seed)?;
    let named = read_checkpoint(&path)?;
    model.load_tensors(&named)?;
    Ok(model)
}

/// Scores the held-out videos of a training run for every seed in `spec`.
pub fn evaluate_run(run: &Path, spec: &ProtocolSpec) -> Result<(ProtocolReport, RunManifest)> {
    spec.validate()?;
    let manifest_path = run.join(crate::manifest::RUN_MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingCheckpoint(vec![manifest_path]));
    }
    let m = RunManifest::read(run)?;
    let cfg = m
        .config
        .clone()
        .ok_or_else(|| parse_err(&manifest_path, "run manifest has no config"))?;
    if cfg.train.stage == crate::config::Stage::Generator {
        return Err(Error::InvalidConfig("generator-only runs cannot be scored".into()));
    }
    let missing: Vec<PathBuf> = spec
        .seeds
        .iter()
        .map(|&s| final_checkpoint(&seed_dir(run, s), &cfg.train))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCheckpoint(missing));
    }
    m.verify_corpus()?;
    let corpus = read_corpus(&m.corpus_path)?;
    let (_, held_idx) = corpus.split_indices(cfg.train.held_out_fraction, cfg.train.split_seed);
    let held = corpus.subset(&held_idx);
    let dims = Dims::of(&corpus);
    let models = spec
        .seeds
        .iter()
        .map(|&s| Ok((s, load_run_model(run, &cfg, dims, s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((run_protocol(&models, &held, spec)?, m))
}

pub fn cmd_eval(run: &Path, spec: &ProtocolSpec, out: &Path, force: bool) -> Result<ProtocolReport> {
    let (report, source) = evaluate_run(run, spec)?;
    prepare_out_dir(out, force)?;
    write_report(out, &report)?;
    let mut m = RunManifest::new(ArtifactKind::Eval, &source.corpus_path, spec.seeds.clone())?;
    m.config = source.config;
    m.protocol = Some(spec.clone());
    m.source_run = Some(fs::canonicalize(run).at(run)?);
    m.write(out)?;
    Ok(report)
}

pub fn cmd_ablate(
    cfg: &Config,
    corpus_dir: &Path,
    out: &Path,
    spec: &ProtocolSpec,
    variants: &[Variant],
    force: bool,
) -> Result<()> {
    cfg.validate()?;
    let corpus = load_corpus_checked(corpus_dir)?;
    prepare_out_dir(out, force)?;
    let mut m = RunManifest::new(ArtifactKind::Ablation, corpus_dir, spec.seeds.clone())?;
    m.config = Some(cfg.clone());
    m.protocol = Some(spec.clone());
    m.write(out)?;
    let report = run_ablation(&corpus, cfg, variants, spec, |variant, seed, model| {
        let path = out
            .join(variant.name())
            .join(format!("seed-{seed}"))
            .join(format!("epoch-{}.ckpt", cfg.train.epochs));
        fs::create_dir_all(path.parent().unwrap()).at(&path)?;
        write_checkpoint(&path, &model.named_tensors())
    })?;
    write_ablation(out, &report)?;
    for d in report.deltas.iter().filter(|d| d.seed == "mean") {
        println!(
            "{:<28} alpha {:<4} beta {:<4} delta {:+.4}",
            d.comparison, d.alpha, d.beta, d.delta
        );
    }
    Ok(())
}
