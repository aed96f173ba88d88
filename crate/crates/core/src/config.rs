//! Run configuration. Values come from layers applied over the defaults in
//! order, so a command line layer placed after a file layer wins.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::harness::ModelSize;
use crate::model::Mode;
use crate::pipeline::PipelineConfig;
use crate::trainer::TrainConfig;

/// Learning rate for a randomly initialized encoder.
pub const FROM_SCRATCH_LR: f64 = 1e-3;
/// Learning rate suited to finetuning a pretrained encoder.
pub const PRETRAINED_LR: f64 = 5e-6;

/// A partial configuration: a flat key-value file or a set of flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub corpus: Option<PathBuf>,
    pub classes: Option<usize>,
    pub split: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub candidates: Option<usize>,
    pub seq_len: Option<usize>,
    pub max_candidate_tokens: Option<usize>,
    pub min_count: Option<usize>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub ff: Option<usize>,
    pub gru_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub lambda: Option<f64>,
    pub episodes: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    /// `from-scratch` or `pretrained`; an explicit `lr` in the same layer wins.
    pub lr_preset: Option<String>,
    pub batch_size: Option<usize>,
    pub mode: Option<String>,
    pub threads: Option<usize>,
    pub eval_train: Option<bool>,
}

impl ConfigLayer {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// Inferred from the largest label when absent.
    pub classes: Option<usize>,
    pub split: SplitSpec,
    pub out_dir: PathBuf,
    pub pipeline: PipelineConfig,
    pub size: ModelSize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            classes: None,
            split: SplitSpec::default(),
            out_dir: PathBuf::from("runs"),
            pipeline: PipelineConfig::default(),
            size: ModelSize::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Applies `layers` in order over the defaults and validates the result.
    pub fn resolve(layers: &[ConfigLayer]) -> Result<Self> {
        let mut c = RunConfig::default();
        for layer in layers {
            c.apply(layer)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn apply(&mut self, l: &ConfigLayer) -> Result<()> {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if l.corpus.is_some() {
            self.corpus.clone_from(&l.corpus);
        }
        if l.classes.is_some() {
            self.classes = l.classes;
        }
        if let Some(s) = &l.split {
            self.split = s.parse()?;
        }
        set(&mut self.train.seed, &l.seed);
        set(&mut self.out_dir, &l.out_dir);
        set(&mut self.pipeline.candidates, &l.candidates);
        set(&mut self.pipeline.seq_len, &l.seq_len);
        set(&mut self.pipeline.max_candidate_tokens, &l.max_candidate_tokens);
        set(&mut self.pipeline.min_count, &l.min_count);
        set(&mut self.size.hidden, &l.hidden);
        set(&mut self.size.layers, &l.layers);
        set(&mut self.size.heads, &l.heads);
        set(&mut self.size.ff, &l.ff);
        set(&mut self.size.gru_hidden, &l.gru_hidden);
        set(&mut self.size.dropout, &l.dropout);
        set(&mut self.train.lambda, &l.lambda);
        set(&mut self.train.episodes, &l.episodes);
        set(&mut self.train.epochs, &l.epochs);
        if let Some(p) = &l.lr_preset {
            self.train.lr = match p.as_str() {
                "from-scratch" => FROM_SCRATCH_LR,
                "pretrained" => PRETRAINED_LR,
                other => return Err(Error::config(format!("unknown lr preset {other:?}"))),
            };
        }
        set(&mut self.train.lr, &l.lr);
        set(&mut self.train.batch_size, &l.batch_size);
        if let Some(m) = &l.mode {
            self.train.mode = m.parse()?;
        }
        set(&mut self.train.threads, &l.threads);
        set(&mut self.train.eval_train, &l.eval_train);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.pipeline.validate()?;
        self.train.validate()?;
        if self.classes.is_some_and(|k| k < 2) {
            return Err(Error::config("need at least 2 classes"));
        }
        let s = &self.size;
        if s.hidden == 0 || s.heads == 0 || s.ff == 0 || s.gru_hidden == 0 || !s.hidden.is_multiple_of(s.heads) {
            return Err(Error::config(format!("invalid model sizes {s:?}")));
        }
        if !(0.0..1.0).contains(&s.dropout) {
            return Err(Error::config(format!("dropout {} not in [0, 1)", s.dropout)));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn mode(&self) -> Mode {
        self.train.mode
    }
}
