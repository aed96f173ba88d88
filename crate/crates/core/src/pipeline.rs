//! Turns raw samples into model-ready inputs: candidates, pair sequences and
//! the standalone summary/document sequences used by the ablation modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{
    extract_candidates, make_pair, make_single, tokenize, IdfTable, PairSequence, Sample, SegmentCandidate,
    TextSequence, Vocabulary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Candidates per document (`T`).
    pub candidates: usize,
    /// Padded sequence length (`N`).
    pub seq_len: usize,
    pub max_candidate_tokens: usize,
    pub min_count: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            candidates: 3,
            seq_len: 256,
            max_candidate_tokens: 80,
            min_count: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::config("number of candidates must be at least 1"));
        }
        if self.seq_len < 8 {
            return Err(Error::config(format!("sequence length must be at least 8, got {}", self.seq_len)));
        }
        if self.max_candidate_tokens == 0 {
            return Err(Error::config("max candidate tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// Gold class as a 0-based index.
    pub class: usize,
    pub candidates: Vec<SegmentCandidate>,
    pub pairs: Vec<PairSequence>,
    pub summary: TextSequence,
    pub document: TextSequence,
    /// Document length in tokens.
    pub doc_len: usize,
}

/// Vocabulary and IDF weights fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextPipeline {
    pub config: PipelineConfig,
    pub vocab: Vocabulary,
    pub idf: IdfTable,
}

impl TextPipeline {
    pub fn fit(config: PipelineConfig, train: &[Sample]) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::config("cannot fit a text pipeline on an empty training split"));
        }
        Ok(TextPipeline {
            config,
            vocab: Vocabulary::build(train, config.min_count),
            idf: IdfTable::fit(train.iter().map(|s| s.document.as_str())),
        })
    }

    pub fn prepare(&self, sample: &Sample, classes: usize) -> Result<PreparedSample> {
        if sample.label == 0 || sample.label > classes {
            return Err(Error::ingest(format!("label {} outside 1..={classes}", sample.label)));
        }
        let c = &self.config;
        let candidates = extract_candidates(sample, &self.idf, c.candidates, c.max_candidate_tokens)?;
        let summary_tokens = tokenize(&sample.summary);
        let doc_tokens = tokenize(&sample.document);
        let pairs = candidates
            .iter()
            .map(|cand| make_pair(&summary_tokens, &cand.tokens, c.seq_len, &self.vocab))
            .collect();
        Ok(PreparedSample {
            class: sample.label - 1,
            pairs,
            candidates,
            summary: make_single(&summary_tokens, c.seq_len, &self.vocab),
            document: make_single(&doc_tokens, c.seq_len, &self.vocab),
            doc_len: doc_tokens.len(),
        })
    }

    pub fn prepare_all(&self, samples: &[Sample], classes: usize) -> Result<Vec<PreparedSample>> {
        samples.iter().map(|s| self.prepare(s, classes)).collect()
    }
}
