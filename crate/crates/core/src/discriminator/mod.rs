//! Real/fake/wrong discriminators D_φ over (image feature, caption) pairs.
//!
//! Both architectures score a batch of pairs at once and return
//! `p = P(caption is a real description of the image)`.

mod cnn;
mod rnn;

pub use cnn::{CnnForwardTrace, KernelPreset, KernelSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{AdamConfig, AdamState, NumError, ParamSet, Tape, Tensor, Var};
use crate::rng::SeededRng;
use crate::textdata::{assemble_pairs, Caption, Example, PairBatch, PairTriple, TextError, TokenId};

/// Probabilities are clamped into `[P_CLAMP, 1 - P_CLAMP]` before logs.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum DiscError {
    #[error("discriminator configuration error: {0}")]
    Config(String),
    #[error("kernel spec error: {0}")]
    Spec(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscKind {
    Cnn,
    Rnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub kind: DiscKind,
    pub vocab_size: usize,
    /// Image feature width, also the word embedding width.
    pub feature_dim: usize,
    pub t_max: usize,
    /// CNN kernel bank.
    pub kernels: KernelSpec,
    /// RNN hidden width `H_D`.
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn init(config: DiscConfig, rng: &mut SeededRng, scale: f64) -> Result<Self, DiscError> {
        let DiscConfig { vocab_size: u, feature_dim: d, t_max, hidden, .. } = config;
        if u == 0 || d == 0 || t_max == 0 {
            return Err(DiscError::Config("vocab_size, feature_dim and t_max must be positive".into()));
        }
        let params = match config.kind {
            DiscKind::Cnn => {
                config.kernels.validate(t_max)?;
                cnn::CnnLayout { spec: config.kernels.clone() }.init(d, u, rng, scale)
            }
            DiscKind::Rnn => {
                if hidden == 0 {
                    return Err(DiscError::Config("hidden must be positive".into()));
                }
                rnn::init(d, u, hidden, rng, scale)
            }
        };
        Ok(Self { config, params })
    }

    pub fn from_params(config: DiscConfig, params: ParamSet) -> Result<Self, DiscError> {
        let reference = Self::init(config.clone(), &mut SeededRng::from_seed(0), 0.0)?;
        if !reference.params.same_layout(&params) {
            return Err(DiscError::Config("parameter layout does not match the discriminator configuration".into()));
        }
        Ok(Self { config, params })
    }

    /// Zeroes the output layer so every pair scores exactly 0.5.
    pub fn zero_output(&mut self) {
        let n = self.params.len();
        self.params.tensor_mut(n - 1).data_mut().fill(0.0);
        self.params.tensor_mut(n - 2).data_mut().fill(0.0);
    }

    /// `1 x B` probabilities recorded on `tape`. `vars` come from binding
    /// `self.params`; captions are padded to `T_max`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: &Tensor, captions: &[Vec<TokenId>]) -> Result<Var, DiscError> {
        if captions.is_empty() {
            return Err(DiscError::Config("empty pair batch".into()));
        }
        if let Some(bad) = captions.iter().find(|c| c.len() != self.config.t_max) {
            return Err(DiscError::Config(format!(
                "caption of length {} must be padded to t_max {}",
                bad.len(),
                self.config.t_max
            )));
        }
        if features.dims2().0 != self.config.feature_dim {
            return Err(DiscError::Num(NumError::Dimension(format!(
                "features {:?} for feature_dim {}",
                features.shape(),
                self.config.feature_dim
            ))));
        }
        match self.config.kind {
            DiscKind::Cnn => cnn::CnnLayout { spec: self.config.kernels.clone() }.forward(tape, vars, features, captions),
            DiscKind::Rnn => rnn::forward(tape, vars, features, captions),
        }
    }

    /// Probabilities for a pair batch, without gradients.
    pub fn probs(&self, batch: &PairBatch) -> Result<Vec<f64>, DiscError> {
        self.probs_raw(&batch.features, &batch.captions)
    }

    pub fn probs_raw(&self, features: &Tensor, captions: &[Vec<TokenId>]) -> Result<Vec<f64>, DiscError> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let p = self.forward(&mut tape, &vars, features, captions)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Scores generated captions against their images.
    pub fn score_captions(&self, features: &[&[f64]], captions: &[Caption]) -> Result<Vec<f64>, DiscError> {
        let d = self.config.feature_dim;
        let b = features.len();
        let mut data = vec![0.0; d * b];
        for (c, f) in features.iter().enumerate() {
            if f.len() != d {
                return Err(DiscError::Num(NumError::Dimension("feature width mismatch".into())));
            }
            for r in 0..d {
                data[r * b + c] = f[r];
            }
        }
        let feats = Tensor::matrix(d, b, data)?;
        let padded: Vec<Vec<TokenId>> = captions.iter().map(|c| c.padded(self.config.t_max)).collect();
        self.probs_raw(&feats, &padded)
    }

    /// Intermediate values of the CNN forward pass for one pair.
    pub fn cnn_trace(&self, feature: &[f64], caption: &[TokenId]) -> Result<CnnForwardTrace, DiscError> {
        if self.config.kind != DiscKind::Cnn {
            return Err(DiscError::Config("trace is only defined for the CNN discriminator".into()));
        }
        cnn::CnnLayout { spec: self.config.kernels.clone() }.trace(&self.params, feature, caption)
    }
}

fn mean_log(tape: &mut Tape, p: Var, complement: bool) -> Var {
    let p = tape.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
    let q = if complement { tape.affine(p, -1.0, 1.0) } else { p };
    let l = tape.ln(q);
    tape.mean(l)
}

/// `-(mean ln p_real + 0.5 mean ln(1 - p_fake) + 0.5 mean ln(1 - p_wrong))`
/// recorded on `tape`.
pub fn disc_loss_graph(disc: &Discriminator, tape: &mut Tape, vars: &[Var], pairs: &PairTriple) -> Result<Var, DiscError> {
    let pr = disc.forward(tape, vars, &pairs.real.features, &pairs.real.captions)?;
    let pf = disc.forward(tape, vars, &pairs.fake.features, &pairs.fake.captions)?;
    let pw = disc.forward(tape, vars, &pairs.wrong.features, &pairs.wrong.captions)?;
    let lr = mean_log(tape, pr, false);
    let lf = mean_log(tape, pf, true);
    let lw = mean_log(tape, pw, true);
    let lf = tape.affine(lf, 0.5, 0.0);
    let lw = tape.affine(lw, 0.5, 0.0);
    let s = tape.add(lr, lf)?;
    let s = tape.add(s, lw)?;
    Ok(tape.affine(s, -1.0, 0.0))
}

pub fn disc_loss(disc: &Discriminator, pairs: &PairTriple) -> Result<f64, DiscError> {
    let mut tape = Tape::new();
    let vars = disc.params.bind_frozen(&mut tape);
    let loss = disc_loss_graph(disc, &mut tape, &vars, pairs)?;
    Ok(tape.value(loss).item())
}

/// Computes the loss gradient into `disc.params` (replacing old gradients)
/// and returns the loss.
pub fn disc_loss_grad(disc: &mut Discriminator, pairs: &PairTriple) -> Result<f64, DiscError> {
    let mut tape = Tape::new();
    let vars = disc.params.bind(&mut tape);
    let loss = disc_loss_graph(disc, &mut tape, &vars, pairs)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    disc.params.zero_grad();
    disc.params.accumulate(&grads, &vars)?;
    Ok(value)
}

/// One ADAM step on the discriminator loss; returns the loss before it.
pub fn disc_step(disc: &mut Discriminator, adam: &mut AdamState, pairs: &PairTriple) -> Result<f64, DiscError> {
    let loss = disc_loss_grad(disc, pairs)?;
    adam.step(&mut disc.params)?;
    Ok(loss)
}

/// Per-class rates with `p > 0.5` read as "real".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub real_recall: f64,
    pub fake_specificity: f64,
    pub wrong_specificity: f64,
    /// Mean of the three rates.
    pub balanced: f64,
}

pub fn accuracy(disc: &Discriminator, triples: &[PairTriple]) -> Result<Accuracy, DiscError> {
    let mut hits = [0usize; 3];
    let mut totals = [0usize; 3];
    for t in triples {
        for (k, batch) in [&t.real, &t.fake, &t.wrong].into_iter().enumerate() {
            for p in disc.probs(batch)? {
                let says_real = p > 0.5;
                if says_real == (k == 0) {
                    hits[k] += 1;
                }
                totals[k] += 1;
            }
        }
    }
    if totals.contains(&0) {
        return Err(DiscError::Config("accuracy needs at least one pair of each kind".into()));
    }
    let rate = |k: usize| hits[k] as f64 / totals[k] as f64;
    let (r, f, w) = (rate(0), rate(1), rate(2));
    Ok(Accuracy { real_recall: r, fake_specificity: f, wrong_specificity: w, balanced: (r + f + w) / 3.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch: 16, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: Option<Accuracy>,
}

/// Pair triples over `data` in shuffled mini-batches; `fakes[i]` is the
/// generated caption for `data[i]`. A trailing batch of one is dropped
/// because it cannot form a wrong pair.
pub fn epoch_triples(
    data: &[Example],
    fakes: &[Caption],
    batch: usize,
    t_max: usize,
    rng: &mut SeededRng,
) -> Result<Vec<PairTriple>, DiscError> {
    use rand::seq::SliceRandom;
    if fakes.len() != data.len() {
        return Err(DiscError::Config(format!("{} fakes for {} examples", fakes.len(), data.len())));
    }
    if batch < 2 {
        return Err(DiscError::Config("batch must be at least 2".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for chunk in order.chunks(batch).filter(|c| c.len() >= 2) {
        let ex: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
        let fk: Vec<Caption> = chunk.iter().map(|&i| fakes[i].clone()).collect();
        out.push(assemble_pairs(&ex, &fk, t_max, rng)?);
    }
    Ok(out)
}

/// One epoch of discriminator training; returns the mean batch loss.
pub fn disc_epoch(
    disc: &mut Discriminator,
    adam: &mut AdamState,
    data: &[Example],
    fakes: &[Caption],
    batch: usize,
    rng: &mut SeededRng,
) -> Result<f64, DiscError> {
    let t_max = disc.config.t_max;
    let triples = epoch_triples(data, fakes, batch, t_max, rng)?;
    if triples.is_empty() {
        return Err(DiscError::Config("training set too small for one pair batch".into()));
    }
    let mut total = 0.0;
    for t in &triples {
        total += disc_step(disc, adam, t)?;
    }
    Ok(total / triples.len() as f64)
}

/// ADAM on the discriminator loss over a fixed fake set `S_f`.
pub fn pretrain_discriminator(
    disc: &mut Discriminator,
    train: &[Example],
    fakes: &[Caption],
    val: Option<&[PairTriple]>,
    config: &DiscTrainConfig,
    rng: &mut SeededRng,
) -> Result<Vec<DiscEpochLog>, DiscError> {
    let mut adam = AdamState::new(config.adam, &disc.params);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = disc_epoch(disc, &mut adam, train, fakes, config.batch, rng)?;
        let val_accuracy = match val {
            Some(v) => Some(accuracy(disc, v)?),
            None => None,
        };
        log::info!("disc epoch {epoch}: loss {loss:.4}");
        log.push(DiscEpochLog { epoch, loss, val_accuracy });
    }
    Ok(log)
}
