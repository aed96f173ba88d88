//! End-to-end commands over files: train, evaluate, ablate, sweep, length
//! report and attention export. Every output directory gets a manifest with
//! the resolved configuration, split hashes and checkpoint hashes.

use std::fs;
use std::path::{Path, PathBuf};

use hinsr_tensor::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{infer_classes, read_jsonl, sha256_hex, split_corpus, Corpus, SplitManifest, SplitSpec};
use crate::error::{Error, Result};
use crate::harness::{
    ablation_csv, export_attention, length_report, run_ablation, sweep_csv, sweep_episodes, AblationRow,
    AttentionRecord, LengthBucketReport, PreparedCorpus, SweepRow,
};
use crate::metrics::EvalReport;
use crate::model::{HinModel, Mode, ModelConfig};
use crate::pipeline::{PreparedSample, TextPipeline};
use crate::text::Sample;
use crate::trainer::{evaluate, log_csv, train_with, TrainOutcome};

pub const MODEL_FORMAT: &str = "hinsr-model/1";

/// Everything besides the weights needed to reuse a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format: String,
    pub model: ModelConfig,
    pub pipeline: TextPipeline,
    pub mode: Mode,
    pub split: SplitSpec,
    pub seed: u64,
    pub corpus_sha256: String,
}

/// Writes the checkpoint and returns the SHA-256 of its bytes.
pub fn save_model(path: impl AsRef<Path>, model: &HinModel, meta: &ModelMeta) -> Result<String> {
    let ckpt = Checkpoint::new(serde_json::to_string(meta)?, model.params().clone());
    let bytes = ckpt.to_bytes();
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(HinModel, ModelMeta)> {
    let ckpt = Checkpoint::read(path)?;
    let meta: ModelMeta = serde_json::from_str(&ckpt.metadata)?;
    if meta.format != MODEL_FORMAT {
        return Err(Error::config(format!("unsupported checkpoint format {:?}", meta.format)));
    }
    let model = HinModel::from_params(meta.model, &ckpt.params)?;
    Ok((model, meta))
}

/// A corpus file with its hash and class count.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub samples: Vec<Sample>,
    pub sha256: String,
    pub classes: usize,
}

pub fn load_corpus(path: impl AsRef<Path>, classes: Option<usize>) -> Result<LoadedCorpus> {
    let (samples, sha256) = read_jsonl(path, classes)?;
    let classes = classes.unwrap_or_else(|| infer_classes(&samples)).max(2);
    Ok(LoadedCorpus {
        samples,
        sha256,
        classes,
    })
}

fn corpus_path(config: &RunConfig) -> Result<&Path> {
    config
        .corpus
        .as_deref()
        .ok_or_else(|| Error::config("no corpus given"))
}

fn load_split(config: &RunConfig) -> Result<(Corpus, usize)> {
    let c = load_corpus(corpus_path(config)?, config.classes)?;
    let corpus = split_corpus(&c.samples, &c.sha256, config.split, config.seed())?;
    Ok((corpus, c.classes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub classes: usize,
    pub split: SplitManifest,
    pub files: Vec<FileHash>,
}

fn write_output(dir: &Path, name: &str, contents: &[u8], files: &mut Vec<FileHash>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    files.push(FileHash {
        file: name.to_string(),
        sha256: sha256_hex(contents),
    });
    Ok(path)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub outcome: TrainOutcome,
    pub test: EvalReport,
}

/// Trains per `config`, writing into `config.out_dir`:
/// `metrics.csv`, `episode-<e>.ckpt` after each episode, `best.ckpt`,
/// `test_report.json` and `manifest.json`.
pub fn train_run(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let (corpus, classes) = load_split(config)?;
    let prepared = PreparedCorpus::new(&corpus, classes, config.pipeline)?;
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir)?;

    let model_config = config.size.model_config(&prepared.pipeline, classes);
    let meta = ModelMeta {
        format: MODEL_FORMAT.into(),
        model: model_config,
        pipeline: prepared.pipeline.clone(),
        mode: config.mode(),
        split: config.split,
        seed: config.seed(),
        corpus_sha256: corpus.manifest.corpus_sha256.clone(),
    };
    let mut files = Vec::new();
    let model = HinModel::new(model_config, config.seed())?;
    let outcome = train_with(model, &prepared.train, &prepared.val, &config.train, |episode, m| {
        let name = format!("episode-{episode}.ckpt");
        let sha256 = save_model(dir.join(&name), m, &meta)?;
        files.push(FileHash { file: name, sha256 });
        Ok(())
    })?;
    write_output(&dir, "metrics.csv", log_csv(&outcome.log).as_bytes(), &mut files)?;
    let sha256 = save_model(dir.join("best.ckpt"), &outcome.best, &meta)?;
    files.push(FileHash {
        file: "best.ckpt".into(),
        sha256,
    });
    let test = evaluate(&outcome.best, &prepared.test, config.mode(), config.train.threads)?.report;
    write_output(&dir, "test_report.json", serde_json::to_string_pretty(&test)?.as_bytes(), &mut files)?;
    write_manifest(
        &dir,
        &RunManifest {
            command: "train".into(),
            config: config.clone(),
            classes,
            split: corpus.manifest,
            files,
        },
    )?;
    Ok(TrainSummary {
        out_dir: dir,
        outcome,
        test,
    })
}

/// Which split of a corpus to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
    /// Every record, ignoring the split.
    All,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            "all" => Ok(SplitName::All),
            _ => Err(Error::config(format!("unknown split {s:?}; expected train, val, test or all"))),
        }
    }
}

/// Prepares one split of `corpus_file` the way the checkpoint's run did.
pub fn checkpoint_samples(meta: &ModelMeta, corpus_file: &Path, split: SplitName) -> Result<Vec<PreparedSample>> {
    let c = load_corpus(corpus_file, Some(meta.model.classes))?;
    let samples = match split {
        SplitName::All => c.samples,
        _ => {
            let corpus = split_corpus(&c.samples, &c.sha256, meta.split, meta.seed)?;
            match split {
                SplitName::Train => corpus.train,
                SplitName::Val => corpus.val,
                _ => corpus.test,
            }
        }
    };
    meta.pipeline.prepare_all(&samples, meta.model.classes)
}

pub fn eval_run(checkpoint: &Path, corpus_file: &Path, split: SplitName, threads: usize) -> Result<EvalReport> {
    let (model, meta) = load_model(checkpoint)?;
    let samples = checkpoint_samples(&meta, corpus_file, split)?;
    Ok(evaluate(&model, &samples, meta.mode, threads)?.report)
}

pub fn length_report_run(checkpoint: &Path, corpus_file: &Path, split: SplitName, threads: usize) -> Result<LengthBucketReport> {
    let (model, meta) = load_model(checkpoint)?;
    let samples = checkpoint_samples(&meta, corpus_file, split)?;
    length_report(&model, &samples, meta.mode, threads)
}

/// Attention records for the first `limit` samples of a split.
pub fn export_attention_run(
    checkpoint: &Path,
    corpus_file: &Path,
    split: SplitName,
    limit: Option<usize>,
) -> Result<Vec<AttentionRecord>> {
    let (model, meta) = load_model(checkpoint)?;
    let samples = checkpoint_samples(&meta, corpus_file, split)?;
    let n = limit.unwrap_or(samples.len()).min(samples.len());
    samples[..n]
        .iter()
        .map(|s| export_attention(&model, &meta.pipeline, s))
        .collect()
}

fn prepared_for(config: &RunConfig) -> Result<(PreparedCorpus, Corpus, usize)> {
    config.validate()?;
    let (corpus, classes) = load_split(config)?;
    let prepared = PreparedCorpus::new(&corpus, classes, config.pipeline)?;
    Ok((prepared, corpus, classes))
}

/// Runs every mode and writes `ablation.csv` and `manifest.json`.
pub fn ablate_run(config: &RunConfig) -> Result<Vec<AblationRow>> {
    let (prepared, corpus, classes) = prepared_for(config)?;
    let rows = run_ablation(&prepared, &config.size, &config.train)?;
    fs::create_dir_all(&config.out_dir)?;
    let mut files = Vec::new();
    write_output(&config.out_dir, "ablation.csv", ablation_csv(&rows).as_bytes(), &mut files)?;
    write_manifest(
        &config.out_dir,
        &RunManifest {
            command: "ablate".into(),
            config: config.clone(),
            classes,
            split: corpus.manifest,
            files,
        },
    )?;
    Ok(rows)
}

/// Runs `E = 0..=e_max` and writes `episodes.csv` and `manifest.json`.
pub fn sweep_run(config: &RunConfig, e_max: usize) -> Result<Vec<SweepRow>> {
    let (prepared, corpus, classes) = prepared_for(config)?;
    let rows = sweep_episodes(&prepared, &config.size, &config.train, e_max)?;
    fs::create_dir_all(&config.out_dir)?;
    let mut files = Vec::new();
    write_output(&config.out_dir, "episodes.csv", sweep_csv(&rows).as_bytes(), &mut files)?;
    write_manifest(
        &config.out_dir,
        &RunManifest {
            command: "sweep-episodes".into(),
            config: config.clone(),
            classes,
            split: corpus.manifest,
            files,
        },
    )?;
    Ok(rows)
}
