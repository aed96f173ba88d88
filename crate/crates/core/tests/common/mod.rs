#![allow(dead_code)]

use hinsr_core::data::split_corpus;
use hinsr_core::harness::{ModelSize, PreparedCorpus};
use hinsr_core::synthetic::{generate, SyntheticRecord, SyntheticSpec};
use hinsr_core::{PipelineConfig, Sample, TrainConfig};

/// Three candidates, and a sequence long enough that a whole four-sentence
/// synthetic document fits into a single encoding.
pub fn synthetic_pipeline() -> PipelineConfig {
    PipelineConfig {
        candidates: 3,
        seq_len: 24,
        max_candidate_tokens: 5,
        min_count: 1,
    }
}

pub fn small_size() -> ModelSize {
    ModelSize {
        hidden: 16,
        layers: 1,
        heads: 2,
        ff: 32,
        gru_hidden: 16,
        dropout: 0.1,
    }
}

pub fn train_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        episodes: 0,
        epochs,
        lr: 3e-3,
        batch_size: 8,
        seed,
        eval_train: false,
        ..TrainConfig::default()
    }
}

pub struct SyntheticCorpus {
    pub records: Vec<SyntheticRecord>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub prepared: PreparedCorpus,
}

/// `samples` three-class records split 80/10/10 at random, all from `seed`.
pub fn synthetic_corpus(samples: usize, noise_rate: f64, seed: u64) -> SyntheticCorpus {
    let mut spec = SyntheticSpec::new(samples, 3);
    spec.noise_rate = noise_rate;
    let records = generate(&spec, seed).unwrap();
    let raw: Vec<Sample> = records.iter().map(SyntheticRecord::sample).collect();
    let corpus = split_corpus(&raw, "synthetic", "random".parse().unwrap(), seed).unwrap();
    let prepared = PreparedCorpus::new(&corpus, 3, synthetic_pipeline()).unwrap();
    SyntheticCorpus {
        records,
        train_indices: corpus.manifest.split.train.clone(),
        test_indices: corpus.manifest.split.test.clone(),
        prepared,
    }
}
