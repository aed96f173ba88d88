//! Experiment runners: mode ablation, episode sweep, document-length buckets
//! and attention export.

use std::fmt::Write as _;

use hinsr_tensor::Graph;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::encoder::{EncoderConfig, PairEncoder};
use crate::error::{Error, Result};
use crate::model::{argmax, HinModel, Mode, ModelConfig};
use crate::pipeline::{PipelineConfig, PreparedSample, TextPipeline};
use crate::trainer::{evaluate, train, TrainConfig, TrainOutcome};

/// Network sizes that do not depend on the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSize {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub gru_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelSize {
    fn default() -> Self {
        ModelSize {
            hidden: 64,
            layers: 2,
            heads: 2,
            ff: 128,
            gru_hidden: 64,
            dropout: 0.1,
        }
    }
}

impl ModelSize {
    pub fn model_config(&self, pipeline: &TextPipeline, classes: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                hidden: self.hidden,
                layers: self.layers,
                heads: self.heads,
                ff: self.ff,
                max_len: pipeline.config.seq_len,
                vocab_size: pipeline.vocab.len(),
            },
            gru_hidden: self.gru_hidden,
            classes,
            candidates: pipeline.config.candidates,
            dropout: self.dropout,
        }
    }
}

/// A split corpus with a fitted pipeline and every sample prepared.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub pipeline: TextPipeline,
    pub classes: usize,
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub split_sha256: String,
}

impl PreparedCorpus {
    pub fn new(corpus: &Corpus, classes: usize, config: PipelineConfig) -> Result<Self> {
        let pipeline = TextPipeline::fit(config, &corpus.train)?;
        Ok(PreparedCorpus {
            train: pipeline.prepare_all(&corpus.train, classes)?,
            val: pipeline.prepare_all(&corpus.val, classes)?,
            test: pipeline.prepare_all(&corpus.test, classes)?,
            split_sha256: corpus.manifest.split_sha256.clone(),
            classes,
            pipeline,
        })
    }

    /// Fresh model seeded with `config.seed`, trained with `config`.
    pub fn train(&self, size: &ModelSize, config: &TrainConfig) -> Result<TrainOutcome> {
        let model = HinModel::new(size.model_config(&self.pipeline, self.classes), config.seed)?;
        train(model, &self.train, &self.val, config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub split_sha256: String,
}

/// Trains and tests every mode with identical data, seed and budget.
pub fn run_ablation(corpus: &PreparedCorpus, size: &ModelSize, config: &TrainConfig) -> Result<Vec<AblationRow>> {
    Mode::ALL
        .into_iter()
        .map(|mode| {
            let cfg = TrainConfig { mode, ..*config };
            let out = corpus.train(size, &cfg)?;
            let e = evaluate(&out.best, &corpus.test, mode, cfg.threads)?;
            Ok(AblationRow {
                mode,
                accuracy: e.report.accuracy,
                macro_f1: e.report.macro_f1,
                split_sha256: corpus.split_sha256.clone(),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("mode,accuracy,macro_f1,split_sha256\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.mode, r.accuracy, r.macro_f1, r.split_sha256);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub episodes: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Test scores for `E = 0..=e_max` rethinking episodes under one seed.
pub fn sweep_episodes(corpus: &PreparedCorpus, size: &ModelSize, config: &TrainConfig, e_max: usize) -> Result<Vec<SweepRow>> {
    if e_max == 0 {
        return Err(Error::config("episode sweep needs a maximum of at least 1"));
    }
    (0..=e_max)
        .map(|episodes| {
            let cfg = TrainConfig { episodes, ..*config };
            let out = corpus.train(size, &cfg)?;
            let e = evaluate(&out.best, &corpus.test, cfg.mode, cfg.threads)?;
            Ok(SweepRow {
                episodes,
                accuracy: e.report.accuracy,
                macro_f1: e.report.macro_f1,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("episodes,accuracy,macro_f1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.episodes, r.accuracy, r.macro_f1);
    }
    out
}

/// Documents with token length in `(lower, upper]`; `None` bounds are open.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthBucket {
    pub lower: Option<usize>,
    pub upper: Option<usize>,
    pub count: usize,
    pub correct: usize,
}

impl LengthBucket {
    /// `None` for an empty bucket.
    pub fn accuracy(&self) -> Option<Ratio<usize>> {
        (self.count > 0).then(|| Ratio::new(self.correct, self.count))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthBucketReport {
    /// The five inner cut points.
    pub cuts: Vec<usize>,
    pub buckets: Vec<LengthBucket>,
}

pub const LENGTH_BUCKETS: usize = 6;

impl LengthBucketReport {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }

    /// Count-weighted mean of the bucket accuracies.
    pub fn weighted_accuracy(&self) -> Ratio<usize> {
        let total = self.total();
        self.buckets
            .iter()
            .filter_map(|b| b.accuracy().map(|a| a * Ratio::new(b.count, total)))
            .fold(Ratio::new(0, 1), |acc, x| acc + x)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,lower,upper,count,correct,accuracy\n");
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, b) in self.buckets.iter().enumerate() {
            let acc = b
                .accuracy()
                .map(|a| (*a.numer() as f64 / *a.denom() as f64).to_string())
                .unwrap_or_else(|| "NA".into());
            let _ = writeln!(out, "{},{},{},{},{},{acc}", i + 1, opt(b.lower), opt(b.upper), b.count, b.correct);
        }
        out
    }
}

/// Splits samples into six buckets at the 1/6, …, 5/6 quantiles of document
/// length. The `k`-th cut is the `⌈k·n/6⌉`-th smallest length; bucket `b`
/// holds lengths in `(cut_{b−1}, cut_b]`.
pub fn length_buckets(lengths: &[usize], correct: &[bool]) -> Result<LengthBucketReport> {
    if lengths.is_empty() {
        return Err(Error::Eval("length buckets need a non-empty test set".into()));
    }
    if lengths.len() != correct.len() {
        return Err(Error::Eval("lengths and outcomes differ in count".into()));
    }
    let n = lengths.len();
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let cuts: Vec<usize> = (1..LENGTH_BUCKETS).map(|k| sorted[(k * n).div_ceil(LENGTH_BUCKETS) - 1]).collect();
    let mut buckets: Vec<LengthBucket> = (0..LENGTH_BUCKETS)
        .map(|b| LengthBucket {
            lower: b.checked_sub(1).map(|i| cuts[i]),
            upper: cuts.get(b).copied(),
            count: 0,
            correct: 0,
        })
        .collect();
    for (&len, &ok) in lengths.iter().zip(correct) {
        let b = cuts.iter().position(|&c| len <= c).unwrap_or(LENGTH_BUCKETS - 1);
        buckets[b].count += 1;
        buckets[b].correct += usize::from(ok);
    }
    Ok(LengthBucketReport { cuts, buckets })
}

/// Length buckets for a model's predictions on `samples`.
pub fn length_report(model: &HinModel, samples: &[PreparedSample], mode: Mode, threads: usize) -> Result<LengthBucketReport> {
    let e = evaluate(model, samples, mode, threads)?;
    let lengths: Vec<usize> = samples.iter().map(|s| s.doc_len).collect();
    let correct: Vec<bool> = e.predictions.iter().zip(samples).map(|(p, s)| p.pred == s.class).collect();
    length_buckets(&lengths, &correct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAttention {
    /// 1-based candidate position.
    pub index: usize,
    /// Byte span in the document.
    pub start: usize,
    pub end: usize,
    pub alpha: f64,
    /// Candidate tokens as fed to the encoder.
    pub tokens: Vec<String>,
    /// Per token, the last-layer attention mass it places on summary tokens.
    pub summary_attention: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub summary_tokens: Vec<String>,
    pub candidates: Vec<CandidateAttention>,
    pub probs: Vec<f64>,
    /// 1-based predicted label.
    pub predicted: usize,
    /// 1-based gold label.
    pub gold: usize,
}

impl AttentionRecord {
    /// 0-based index of the candidate with the largest weight.
    pub fn top_candidate(&self) -> usize {
        let alpha: Vec<f64> = self.candidates.iter().map(|c| c.alpha).collect();
        argmax(&alpha)
    }
}

/// Candidate weights and token-to-summary attention from a full-mode pass.
pub fn export_attention(model: &HinModel, pipeline: &TextPipeline, sample: &PreparedSample) -> Result<AttentionRecord> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, sample, Mode::Full)?;
    let alpha = out.alpha_values(&g).expect("full mode has attention");
    let probs = out.probs(&g);
    let vocab = &pipeline.vocab;
    let first = &sample.pairs[0];
    let summary_tokens = first.ids[first.summary_span.clone()]
        .iter()
        .map(|&id| vocab.token(id).to_string())
        .collect();
    let candidates = sample
        .candidates
        .iter()
        .zip(&sample.pairs)
        .zip(&out.pairs)
        .zip(alpha)
        .map(|(((cand, pair), enc), a)| CandidateAttention {
            index: cand.index,
            start: cand.span.start,
            end: cand.span.end,
            alpha: a,
            tokens: cand.tokens[..pair.candidate_span.len()].to_vec(),
            summary_attention: PairEncoder::summary_attention(
                &g,
                &enc.trace,
                pair.candidate_span.clone(),
                pair.summary_span.clone(),
            ),
        })
        .collect();
    Ok(AttentionRecord {
        summary_tokens,
        candidates,
        predicted: argmax(&probs) + 1,
        gold: sample.class + 1,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_lengths_fill_one_bucket() {
        let r = length_buckets(&[7; 10], &[true; 10]).unwrap();
        assert_eq!(r.buckets[0].count, 10);
        assert!(r.buckets[1..].iter().all(|b| b.count == 0 && b.accuracy().is_none()));
        assert!(r.to_csv().contains(",NA\n"));
        assert_eq!(r.weighted_accuracy(), Ratio::new(1, 1));
    }

    #[test]
    fn distinct_lengths_split_evenly() {
        let lengths: Vec<usize> = (0..600).rev().map(|i| 3 * i + 1).collect();
        let correct: Vec<bool> = (0..600).map(|i| i % 3 == 0).collect();
        let r = length_buckets(&lengths, &correct).unwrap();
        assert!(r.buckets.iter().all(|b| b.count == 100));
        assert_eq!(r.weighted_accuracy(), Ratio::new(200, 600));
    }

    #[test]
    fn buckets_partition_uneven_sets() {
        for n in 1..40 {
            let lengths: Vec<usize> = (0..n).map(|i| (i * 7919) % 13).collect();
            let correct: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let r = length_buckets(&lengths, &correct).unwrap();
            assert_eq!(r.total(), n);
            let hits = correct.iter().filter(|&&c| c).count();
            assert_eq!(r.weighted_accuracy(), Ratio::new(hits, n));
        }
        assert!(length_buckets(&[], &[]).is_err());
    }
}
