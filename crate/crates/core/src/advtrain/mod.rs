//! Adversarial training: the combined reward, self-critical policy-gradient
//! updates, the alternating generator/discriminator loop and the sweep
//! harness.

mod config;
mod eval;
mod sweep;
mod trainer;

pub use config::{TrainConfig, TRAIN_CONFIG_KEYS};
pub use eval::{evaluate_generator, DecodeMode};
pub use sweep::{default_grid, parse_sweep_csv, run_sweep, write_sweep_csv, SweepCell, SweepGrid, SweepResult, SweepRow};
pub use trainer::{scst_train, Event, LogRecord, Phase, StopAt, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::discriminator::{DiscError, Discriminator};
use crate::generator::{feature_matrix, greedy_batch, sample_batch, GenError, Generator};
use crate::metrics::{sentence_reward, IdfTable, MetricError, MetricId};
use crate::numcore::{AdamState, NumError, Tape};
use crate::rng::SeededRng;
use crate::textdata::{Caption, Example, TextError, BOS, PAD};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid value for {key}: {message}")]
    Config { key: String, message: String },
    #[error("non-finite value in parameter tensor {tensor} ({phase})")]
    NonFinite { tensor: String, phase: String },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl TrainError {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        TrainError::Config { key: key.to_string(), message: message.into() }
    }
}

/// `r = λ p + (1 − λ) s`.
pub fn combined_reward(p: f64, s: f64, lambda: f64) -> Result<f64, TrainError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::config("lambda", format!("{lambda} is outside [0, 1]")));
    }
    Ok(lambda * p + (1.0 - lambda) * s)
}

/// Reward terms of one sampled caption and its greedy baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub p: f64,
    pub s: f64,
    pub r: f64,
    pub baseline: f64,
    pub advantage: f64,
}

/// Sentence-level language score `s`.
pub trait Scorer: Sync {
    fn score(&self, cand: &Caption, refs: &[Caption]) -> Result<f64, TrainError>;
}

/// Scores with one of the caption metrics under a fixed IDF table.
#[derive(Clone, Debug)]
pub struct MetricScorer {
    pub idf: IdfTable,
    pub q: MetricId,
}

impl Scorer for MetricScorer {
    fn score(&self, cand: &Caption, refs: &[Caption]) -> Result<f64, TrainError> {
        Ok(sentence_reward(cand, refs, &self.idf, self.q)?)
    }
}

/// Result of one self-critical update.
#[derive(Clone, Debug, PartialEq)]
pub struct ScstOutcome {
    /// `−mean(A · Σ_t log G(x^s_t))`, advantages held constant.
    pub loss: f64,
    pub rewards: Vec<RewardBreakdown>,
    pub samples: Vec<Caption>,
}

/// One self-critical policy-gradient step.
///
/// Each image gets a sampled caption and a greedy caption, both rewarded
/// with the same combined reward. Without a discriminator the reward is
/// the language score alone. The advantage multiplies every step's
/// log-likelihood of the sampled caption; no gradient flows through it.
pub fn scst_update(
    gen: &mut Generator,
    adam: &mut AdamState,
    batch: &[&Example],
    disc: Option<&Discriminator>,
    scorer: &dyn Scorer,
    lambda: f64,
    rng: &mut SeededRng,
) -> Result<ScstOutcome, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::config("batch", "empty SCST batch"));
    }
    let features: Vec<&[f64]> = batch.iter().map(|e| e.feature.as_slice()).collect();
    let samples = sample_batch(gen, &features, rng)?;
    let greedy = greedy_batch(gen, &features)?;
    let sample_caps: Vec<Caption> = samples.iter().map(|d| d.caption.clone()).collect();
    let greedy_caps: Vec<Caption> = greedy.iter().map(|d| d.caption.clone()).collect();

    let (p_s, p_g) = match disc {
        Some(d) => (d.score_captions(&features, &sample_caps)?, d.score_captions(&features, &greedy_caps)?),
        None => (vec![0.0; batch.len()], vec![0.0; batch.len()]),
    };
    let mut rewards = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let s = scorer.score(&sample_caps[i], &ex.references)?;
        let s_g = scorer.score(&greedy_caps[i], &ex.references)?;
        let (r, baseline) = match disc {
            Some(_) => (combined_reward(p_s[i], s, lambda)?, combined_reward(p_g[i], s_g, lambda)?),
            None => (s, s_g),
        };
        rewards.push(RewardBreakdown { p: p_s[i], s, r, baseline, advantage: r - baseline });
    }

    let mut tape = Tape::new();
    let graph = gen.bind(&mut tape, true);
    let feats = tape.constant(feature_matrix(&features)?);
    let (mut h, mut c) = graph.start(&mut tape, feats)?;
    let longest = sample_caps.iter().map(Caption::len).max().unwrap_or(0);
    let inv_b = 1.0 / batch.len() as f64;
    let mut terms = Vec::with_capacity(longest);
    for t in 0..longest {
        let inputs: Vec<usize> =
            sample_caps.iter().map(|cap| if t == 0 { BOS } else { cap.ids.get(t - 1).copied().unwrap_or(PAD) }).collect();
        let targets: Vec<usize> = sample_caps.iter().map(|cap| cap.ids.get(t).copied().unwrap_or(PAD)).collect();
        let weights: Vec<f64> = sample_caps
            .iter()
            .zip(&rewards)
            .map(|(cap, rw)| if t < cap.len() { rw.advantage * inv_b } else { 0.0 })
            .collect();
        let (logits, h2, c2) = graph.step(&mut tape, &inputs, h, c)?;
        h = h2;
        c = c2;
        terms.push(tape.softmax_xent_cols(logits, &targets, &weights)?);
    }
    let stacked = tape.concat_rows(&terms)?;
    let loss = tape.sum(stacked);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    gen.params.zero_grad();
    gen.params.accumulate(&grads, graph.vars())?;
    adam.step(&mut gen.params)?;
    Ok(ScstOutcome { loss: value, rewards, samples: sample_caps })
}

/// Summary of one generator step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GStepLog {
    pub iter: u64,
    pub mean_p: f64,
    pub mean_s: f64,
    pub mean_adv: f64,
}

impl GStepLog {
    fn from_rewards(iter: u64, rewards: &[RewardBreakdown]) -> Self {
        let n = rewards.len() as f64;
        let mean = |f: fn(&RewardBreakdown) -> f64| rewards.iter().map(f).sum::<f64>() / n;
        Self { iter, mean_p: mean(|r| r.p), mean_s: mean(|r| r.s), mean_adv: mean(|r| r.advantage) }
    }
}
