//! Reward-reweighted training.
//!
//! Every training sample carries a reward `r`, initially 1. Training runs in
//! episodes of a few epochs each, minimizing `r · CE` for both the decoder
//! and the feedback head. Between episodes the model is frozen, the feedback
//! head scores every training sample, and rewards move toward the predicted
//! probability of the gold class: `r ← λ·r + (1 − λ)·P̂(gold)`. Samples the
//! model keeps disagreeing with (often mislabelled ones) lose weight.

use std::fmt::Write as _;

use hinsr_tensor::{Adam, AdamConfig, Graph, ParamId, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{HinModel, Mode};
use crate::parallel::par_map;
use crate::pipeline::PreparedSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Rethinking episodes after the initial one; 0 disables reweighting.
    pub episodes: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub threads: usize,
    /// Also score the training split after every epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.8,
            episodes: 1,
            epochs: 2,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
            mode: Mode::Full,
            threads: 1,
            eval_train: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs per episode must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        Ok(())
    }
}

/// `λ·r_prev + (1 − λ)·p_gold`.
pub fn update_reward(r_prev: f64, p_gold: f64, lambda: f64) -> f64 {
    lambda * r_prev + (1.0 - lambda) * p_gold
}

/// `r · CE(logits, gold)`.
pub fn loss_rethink(g: &mut Graph, logits: Var, gold: usize, r: f64) -> Result<Var> {
    let ce = g.cross_entropy(logits, gold)?;
    Ok(g.scale(ce, r))
}

/// Per-sample rewards and the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardState {
    pub rewards: Vec<f64>,
    pub episode: usize,
}

impl RewardState {
    pub fn new(n: usize) -> Self {
        RewardState {
            rewards: vec![1.0; n],
            episode: 0,
        }
    }

    /// Applies one update from each sample's gold-class probability.
    pub fn update(&mut self, p_gold: &[f64], lambda: f64) -> Result<()> {
        if p_gold.len() != self.rewards.len() {
            return Err(Error::config(format!(
                "{} probabilities for {} rewards",
                p_gold.len(),
                self.rewards.len()
            )));
        }
        for (r, &p) in self.rewards.iter_mut().zip(p_gold) {
            *r = update_reward(*r, p, lambda);
        }
        self.episode += 1;
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        if self.rewards.is_empty() {
            return 0.0;
        }
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a base seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Sample visiting order for one epoch.
pub fn epoch_order(seed: u64, episode: usize, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, episode as u64, epoch as u64]));
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub pred: usize,
}

/// Evaluation-mode predictions in input order.
pub fn predict_all(model: &HinModel, samples: &[PreparedSample], mode: Mode, threads: usize) -> Result<Vec<Prediction>> {
    par_map(samples, threads, |_, s| {
        let (probs, pred) = model.predict(s, mode)?;
        Ok(Prediction { probs, pred })
    })
}

/// Evaluation-mode feedback-head distributions in input order.
pub fn feedback_all(model: &HinModel, samples: &[PreparedSample], mode: Mode, threads: usize) -> Result<Vec<Vec<f64>>> {
    par_map(samples, threads, |_, s| {
        let mut g = Graph::new();
        let out = model.forward(&mut g, s, mode)?;
        Ok(out.feedback_probs(&g))
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
    /// Mean decoder cross-entropy.
    pub loss: f64,
}

pub fn evaluate(model: &HinModel, samples: &[PreparedSample], mode: Mode, threads: usize) -> Result<Evaluation> {
    let predictions = predict_all(model, samples, mode, threads)?;
    let preds: Vec<usize> = predictions.iter().map(|p| p.pred).collect();
    let golds: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let report = EvalReport::new(&preds, &golds, model.config().classes)?;
    let loss = predictions
        .iter()
        .zip(&golds)
        .map(|(p, &g)| -p.probs[g].ln())
        .sum::<f64>()
        / samples.len() as f64;
    Ok(Evaluation {
        report,
        predictions,
        loss,
    })
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub episode: usize,
    /// 1-based epoch within the episode.
    pub epoch: usize,
    pub split: String,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub mean_reward: f64,
    pub loss: f64,
}

pub const LOG_HEADER: &str = "episode,epoch,split,accuracy,macro_f1,mean_reward,loss";

pub fn log_csv(rows: &[LogRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.episode,
            r.epoch,
            r.split,
            opt(r.accuracy),
            opt(r.macro_f1),
            r.mean_reward,
            r.loss
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (earliest on ties).
    pub best: HinModel,
    /// `(episode, epoch)` at which `best` was taken.
    pub best_at: (usize, usize),
    pub last: HinModel,
    pub log: Vec<LogRow>,
    pub rewards: RewardState,
}

type SampleGrads = (f64, Vec<(ParamId, Vec<f64>)>);

fn sample_step(model: &HinModel, sample: &PreparedSample, reward: f64, mode: Mode, seed: u64) -> Result<SampleGrads> {
    let mut g = Graph::training(seed);
    let out = model.forward(&mut g, sample, mode)?;
    let dec = loss_rethink(&mut g, out.logits, sample.class, reward)?;
    let fb = loss_rethink(&mut g, out.feedback_logits, sample.class, reward)?;
    let loss = g.add(dec, fb)?;
    g.backward(loss)?;
    let grads = g.param_grads().map(|(id, gr)| (id, gr.to_vec())).collect();
    Ok((g.value(loss).data()[0], grads))
}

/// Trains `model` on `train`, selecting by accuracy on `val`.
pub fn train(model: HinModel, train: &[PreparedSample], val: &[PreparedSample], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train, val, config, |_, _| Ok(()))
}

/// Like [`train`], calling `on_episode(episode, model)` after each episode.
pub fn train_with<F>(
    mut model: HinModel,
    train: &[PreparedSample],
    val: &[PreparedSample],
    config: &TrainConfig,
    mut on_episode: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &HinModel) -> Result<()>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if val.is_empty() {
        return Err(Error::config("validation split is empty"));
    }
    let mode = config.mode;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), model.params())?;
    let mut rewards = RewardState::new(train.len());
    let mut log = Vec::new();
    let mut best: Option<(f64, HinModel, (usize, usize))> = None;

    for episode in 0..=config.episodes {
        if episode > 0 {
            let fb = feedback_all(&model, train, mode, config.threads)?;
            let p_gold: Vec<f64> = fb.iter().zip(train).map(|(p, s)| p[s.class]).collect();
            rewards.update(&p_gold, config.lambda)?;
        }
        for epoch in 1..=config.epochs {
            let order = epoch_order(config.seed, episode, epoch, train.len());
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let steps = par_map(batch, config.threads, |_, &i| {
                    let seed = derive_seed(config.seed, &[1, episode as u64, epoch as u64, i as u64]);
                    sample_step(&model, &train[i], rewards.rewards[i], mode, seed)
                })?;
                let params = model.params_mut();
                for (loss, grads) in steps {
                    if !loss.is_finite() {
                        return Err(Error::Diverged {
                            episode,
                            epoch,
                            detail: format!("non-finite training loss {loss}"),
                        });
                    }
                    total += loss;
                    for (id, gr) in grads {
                        for (d, s) in params.get_mut(id).grad.iter_mut().zip(&gr) {
                            *d += s;
                        }
                    }
                }
                params.scale_grads(1.0 / batch.len() as f64);
                adam.step(params)?;
                params.zero_grad();
            }
            let train_loss = total / train.len() as f64;

            let (train_acc, train_f1) = if config.eval_train {
                let e = evaluate(&model, train, mode, config.threads)?;
                (Some(e.report.accuracy), Some(e.report.macro_f1))
            } else {
                (None, None)
            };
            log.push(LogRow {
                episode,
                epoch,
                split: "train".into(),
                accuracy: train_acc,
                macro_f1: train_f1,
                mean_reward: rewards.mean(),
                loss: train_loss,
            });
            let v = evaluate(&model, val, mode, config.threads)?;
            if !v.loss.is_finite() {
                return Err(Error::Diverged {
                    episode,
                    epoch,
                    detail: format!("non-finite validation loss {}", v.loss),
                });
            }
            log.push(LogRow {
                episode,
                epoch,
                split: "val".into(),
                accuracy: Some(v.report.accuracy),
                macro_f1: Some(v.report.macro_f1),
                mean_reward: rewards.mean(),
                loss: v.loss,
            });
            if best.as_ref().is_none_or(|(acc, _, _)| v.report.accuracy > *acc) {
                best = Some((v.report.accuracy, model.clone(), (episode, epoch)));
            }
        }
        on_episode(episode, &model)?;
    }
    let (_, best, best_at) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_at,
        last: model,
        log,
        rewards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::ModelConfig;
    use crate::pipeline::{PipelineConfig, TextPipeline};
    use crate::text::Sample;
    use hinsr_tensor::Tensor;

    #[test]
    fn reward_arithmetic() {
        for p in [0.0, 0.3, 0.7, 1.0] {
            assert_eq!(update_reward(0.42, p, 1.0), 0.42);
        }
        assert_eq!(update_reward(1.0, 0.7, 0.0), 0.7);
        assert_eq!(update_reward(1.0, 0.5, 0.8), 0.9);
    }

    #[test]
    fn reward_is_strictly_monotone_in_gold_probability() {
        for lambda in [0.0, 0.3, 0.8, 0.99] {
            assert!(update_reward(0.6, 0.2, lambda) < update_reward(0.6, 0.21, lambda));
        }
    }

    #[test]
    fn reward_state_tracks_episodes() {
        let mut s = RewardState::new(3);
        assert_eq!(s.rewards, vec![1.0; 3]);
        s.update(&[0.5, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(s.rewards, vec![0.75, 1.0, 0.5]);
        assert_eq!(s.episode, 1);
        assert_eq!(s.mean(), 0.75);
        assert!(s.update(&[0.5], 0.5).is_err());
    }

    #[test]
    fn loss_rethink_scales_cross_entropy() {
        let logits = [0.3, -1.2, 0.8];
        let run = |r: f64| {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::matrix(1, 3, logits.to_vec()).unwrap(), true);
            let l = loss_rethink(&mut g, x, 1, r).unwrap();
            g.backward(l).unwrap();
            (g.value(l).data()[0], g.grad(x).unwrap().to_vec())
        };
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 3, logits.to_vec()).unwrap(), true);
        let ce = g.cross_entropy(x, 1).unwrap();
        g.backward(ce).unwrap();
        let (l1, g1) = run(1.0);
        assert_eq!(l1.to_bits(), g.value(ce).data()[0].to_bits());
        assert_eq!(g1, g.grad(x).unwrap());
        let (l0, g0) = run(0.0);
        assert_eq!(l0, 0.0);
        assert!(g0.iter().all(|&v| v == 0.0));
        let (lh, gh) = run(0.5);
        assert_eq!(lh, l1 * 0.5);
        for (a, b) in gh.iter().zip(&g1) {
            assert_eq!(*a, b * 0.5);
        }
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(7, 0, 1, 50);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(7, 0, 1, 50));
        assert_ne!(a, epoch_order(7, 0, 2, 50));
        assert_ne!(a, epoch_order(8, 0, 1, 50));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { lambda: 1.5, ..ok },
            TrainConfig { epochs: 0, ..ok },
            TrainConfig { batch_size: 0, ..ok },
            TrainConfig { lr: 0.0, ..ok },
            TrainConfig { threads: 0, ..ok },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    fn toy() -> (HinModel, Vec<PreparedSample>) {
        let raw = vec![
            Sample::new("the pump is great. the hose is bad.", "pump", 1),
            Sample::new("the pump is bad. the hose is great.", "pump", 2),
            Sample::new("the hose is great. the pump is bad.", "hose", 1),
            Sample::new("the hose is bad. the pump is great.", "hose", 2),
        ];
        let pc = PipelineConfig {
            candidates: 2,
            seq_len: 10,
            max_candidate_tokens: 5,
            min_count: 1,
        };
        let pipe = TextPipeline::fit(pc, &raw).unwrap();
        let enc = EncoderConfig {
            hidden: 8,
            layers: 1,
            heads: 2,
            ff: 8,
            max_len: 10,
            vocab_size: pipe.vocab.len(),
        };
        let cfg = ModelConfig {
            encoder: enc,
            gru_hidden: 4,
            classes: 2,
            candidates: 2,
            dropout: 0.1,
        };
        (HinModel::new(cfg, 1).unwrap(), pipe.prepare_all(&raw, 2).unwrap())
    }

    fn quick(episodes: usize, lambda: f64, threads: usize) -> TrainConfig {
        TrainConfig {
            lambda,
            episodes,
            epochs: 2,
            batch_size: 3,
            threads,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn runs_are_deterministic_across_thread_counts() {
        let (m, data) = toy();
        let a = train(m.clone(), &data, &data, &quick(1, 0.8, 1)).unwrap();
        let b = train(m, &data, &data, &quick(1, 0.8, 3)).unwrap();
        assert_eq!(log_csv(&a.log), log_csv(&b.log));
        assert_eq!(a.last.params(), b.last.params());
        assert_eq!(a.rewards, b.rewards);
    }

    #[test]
    fn inert_rewards_reproduce_the_plain_run() {
        let (m, data) = toy();
        let plain = train(m.clone(), &data, &data, &quick(0, 0.8, 1)).unwrap();
        let inert = train(m, &data, &data, &quick(2, 1.0, 1)).unwrap();
        assert_eq!(plain.log[..], inert.log[..plain.log.len()]);
        assert!(inert.rewards.rewards.iter().all(|&r| r == 1.0));
        assert_eq!(inert.rewards.episode, 2);
        assert_eq!(plain.rewards.episode, 0);
    }

    #[test]
    fn log_has_two_rows_per_epoch_and_hooks_fire() {
        let (m, data) = toy();
        let mut seen = Vec::new();
        let out = train_with(m, &data, &data, &quick(2, 0.8, 1), |e, _| {
            seen.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
        assert_eq!(out.log.len(), 3 * 2 * 2);
        let csv = log_csv(&out.log);
        assert!(csv.starts_with(LOG_HEADER));
        assert_eq!(csv.lines().count(), 13);
        assert!(out.rewards.rewards.iter().all(|&r| (0.0..=1.0).contains(&r)));
    }

    #[test]
    fn empty_splits_are_rejected() {
        let (m, data) = toy();
        assert!(matches!(train(m.clone(), &[], &data, &quick(0, 0.8, 1)), Err(Error::Config(_))));
        assert!(matches!(train(m, &data, &[], &quick(0, 0.8, 1)), Err(Error::Config(_))));
    }
}
