use serde::{Deserialize, Serialize};

use super::{feature_matrix, greedy_batch, GenError, Generator};
use crate::metrics::{corpus_score, IdfTable, MetricId};
use crate::numcore::{AdamConfig, AdamState, Tape, Var};
use crate::rng::SeededRng;
use crate::textdata::{Caption, Example, BOS, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self { epochs: 25, batch: 16, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleEpochLog {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub loss: f64,
    pub val_cider_d: Option<f64>,
}

/// Teacher-forced negative log-likelihood per token, recorded on `tape`.
fn mle_graph(gen: &Generator, tape: &mut Tape, trainable: bool, batch: &[(&[f64], &Caption)]) -> Result<(Var, Vec<Var>), GenError> {
    if batch.is_empty() {
        return Err(GenError::Config("empty MLE batch".into()));
    }
    for (_, cap) in batch {
        if cap.is_empty() || cap.len() > gen.t_max() {
            return Err(GenError::Config(format!("reference length {} outside 1..={}", cap.len(), gen.t_max())));
        }
    }
    let graph = gen.bind(tape, trainable);
    let features: Vec<&[f64]> = batch.iter().map(|b| b.0).collect();
    let feats = tape.constant(feature_matrix(&features)?);
    let (mut h, mut c) = graph.start(tape, feats)?;
    let tokens: usize = batch.iter().map(|b| b.1.len()).sum();
    let longest = batch.iter().map(|b| b.1.len()).max().unwrap_or(0);
    let scale = 1.0 / tokens as f64;
    let mut terms = Vec::with_capacity(longest);
    for t in 0..longest {
        let inputs: Vec<usize> = batch
            .iter()
            .map(|(_, cap)| if t == 0 { BOS } else { cap.ids.get(t - 1).copied().unwrap_or(PAD) })
            .collect();
        let targets: Vec<usize> = batch.iter().map(|(_, cap)| cap.ids.get(t).copied().unwrap_or(PAD)).collect();
        let weights: Vec<f64> = batch.iter().map(|(_, cap)| if t < cap.len() { scale } else { 0.0 }).collect();
        let (logits, h2, c2) = graph.step(tape, &inputs, h, c)?;
        h = h2;
        c = c2;
        terms.push(tape.softmax_xent_cols(logits, &targets, &weights)?);
    }
    let stacked = tape.concat_rows(&terms)?;
    Ok((tape.sum(stacked), graph.vars().to_vec()))
}

/// Mean per-token negative log-likelihood of the references (PAD masked).
pub fn mle_loss(gen: &Generator, batch: &[(&[f64], &Caption)]) -> Result<f64, GenError> {
    let mut tape = Tape::new();
    let (loss, _) = mle_graph(gen, &mut tape, false, batch)?;
    Ok(tape.value(loss).item())
}

/// One ADAM step on the MLE loss; returns the loss before the step.
pub fn mle_step(gen: &mut Generator, adam: &mut AdamState, batch: &[(&[f64], &Caption)]) -> Result<f64, GenError> {
    let mut tape = Tape::new();
    let (loss, vars) = mle_graph(gen, &mut tape, true, batch)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    gen.params.zero_grad();
    gen.params.accumulate(&grads, &vars)?;
    adam.step(&mut gen.params)?;
    Ok(value)
}

/// One pass over `data` in shuffled mini-batches, one uniformly drawn
/// reference per example. Returns the mean batch loss.
pub fn mle_epoch(
    gen: &mut Generator,
    adam: &mut AdamState,
    data: &[Example],
    batch: usize,
    rng: &mut SeededRng,
) -> Result<f64, GenError> {
    use rand::seq::SliceRandom;
    if data.is_empty() {
        return Err(GenError::Config("empty training set".into()));
    }
    if batch == 0 {
        return Err(GenError::Config("batch must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in order.chunks(batch) {
        let rows: Vec<(&[f64], &Caption)> = chunk
            .iter()
            .map(|&i| {
                let ex = &data[i];
                (ex.feature.as_slice(), &ex.references[rng.below(ex.references.len())])
            })
            .collect();
        total += mle_step(gen, adam, &rows)?;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Corpus CIDEr-D of greedy decodes.
pub(crate) fn greedy_cider_d(gen: &Generator, data: &[Example], idf: &IdfTable) -> Result<f64, GenError> {
    let feats: Vec<&[f64]> = data.iter().map(|e| e.feature.as_slice()).collect();
    let caps: Vec<Caption> = greedy_batch(gen, &feats)?.into_iter().map(|d| d.caption).collect();
    let refs: Vec<Vec<Caption>> = data.iter().map(|e| e.references.clone()).collect();
    Ok(corpus_score(MetricId::CiderD, &caps, &refs, idf)?)
}

/// ADAM on the MLE loss for `config.epochs` epochs. With `val`, each epoch
/// also logs the held-out CIDEr-D of greedy decodes.
pub fn pretrain_generator(
    gen: &mut Generator,
    train: &[Example],
    val: Option<(&[Example], &IdfTable)>,
    config: &MleConfig,
    rng: &mut SeededRng,
) -> Result<Vec<MleEpochLog>, GenError> {
    let mut adam = AdamState::new(config.adam, &gen.params);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = mle_epoch(gen, &mut adam, train, config.batch, rng)?;
        let val_cider_d = match val {
            Some((data, idf)) => Some(greedy_cider_d(gen, data, idf)?),
            None => None,
        };
        log::info!("mle epoch {epoch}: loss {loss:.4}");
        log.push(MleEpochLog { epoch, loss, val_cider_d });
    }
    Ok(log)
}
