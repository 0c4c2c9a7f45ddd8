//! The caption generator: an image-conditioned LSTM decoder.
//!
//! Step 0 consumes the linearly projected image feature (its logits are
//! discarded), step 1 consumes BOS and predicts the first word, and every
//! later step consumes the previous word. The same arithmetic is available
//! on a [`Tape`] for training and as plain array code for decoding; the two
//! paths agree bitwise.

mod decode;
mod train;

pub use decode::{
    beam_search, beam_search_model, ensemble_decode, greedy_batch, greedy_decode, sample_batch, sample_sequence,
    score_sequence, DecodeResult, Ensemble, StepModel,
};
pub use train::{mle_epoch, mle_loss, mle_step, pretrain_generator, MleConfig, MleEpochLog};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricError;
use crate::numcore::{init_uniform, log_softmax, sigmoid, NumError, ParamSet, Tape, Tensor, Var};
use crate::rng::SeededRng;
use crate::textdata::{TextError, TokenId, BOS};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("generator configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    /// `U`, including the reserved tokens.
    pub vocab_size: usize,
    /// `d`; word embeddings share this width with the projected image.
    pub feature_dim: usize,
    /// `H`.
    pub hidden: usize,
    /// Longest generated caption, EOS included.
    pub t_max: usize,
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("t_max", self.t_max),
        ] {
            if v == 0 {
                return Err(GenError::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::textdata::EOS {
            return Err(GenError::Config("vocab_size must cover the reserved tokens".into()));
        }
        Ok(())
    }
}

const EMBED: usize = 0;
const IMG_PROJ: usize = 1;
const IMG_BIAS: usize = 2;
const LSTM_WX: usize = 3;
const LSTM_WH: usize = 4;
const LSTM_B: usize = 5;
const OUT_PROJ: usize = 6;
const OUT_BIAS: usize = 7;

/// Generator parameters θ with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GenConfig,
    pub params: ParamSet,
}

/// LSTM state of one or more columns, `H x B` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub cols: usize,
}

/// What a single step consumes.
#[derive(Clone, Copy, Debug)]
pub enum GenInput<'a> {
    Feature(&'a [f64]),
    Token(TokenId),
}

impl Generator {
    /// Uniform `(-scale, scale)` initialization; `scale = 0` gives all zeros.
    pub fn init(config: GenConfig, rng: &mut SeededRng, scale: f64) -> Result<Self, GenError> {
        config.validate()?;
        let GenConfig { vocab_size: u, feature_dim: d, hidden: h, .. } = config;
        let mut params = ParamSet::new();
        params.push("gen.embed", init_uniform(rng, &[d, u], scale));
        params.push("gen.img_proj", init_uniform(rng, &[d, d], scale));
        params.push("gen.img_bias", Tensor::zeros(&[d]));
        params.push("gen.lstm.w_x", init_uniform(rng, &[4 * h, d], scale));
        params.push("gen.lstm.w_h", init_uniform(rng, &[4 * h, h], scale));
        params.push("gen.lstm.bias", Tensor::zeros(&[4 * h]));
        params.push("gen.out_proj", init_uniform(rng, &[u, h], scale));
        params.push("gen.out_bias", Tensor::zeros(&[u]));
        Ok(Self { config, params })
    }

    pub fn zeros(config: GenConfig) -> Result<Self, GenError> {
        Self::init(config, &mut SeededRng::from_seed(0), 0.0)
    }

    /// Wraps a loaded parameter set after checking its layout.
    pub fn from_params(config: GenConfig, params: ParamSet) -> Result<Self, GenError> {
        let reference = Self::zeros(config)?;
        if !reference.params.same_layout(&params) {
            return Err(GenError::Config("parameter layout does not match the generator configuration".into()));
        }
        Ok(Self { config, params })
    }

    fn data(&self, slot: usize) -> &[f64] {
        self.params.tensor(slot).data()
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn t_max(&self) -> usize {
        self.config.t_max
    }

    fn check_feature(&self, feature: &[f64]) -> Result<(), GenError> {
        if feature.len() != self.config.feature_dim {
            return Err(GenError::Num(NumError::Dimension(format!(
                "feature of length {} for feature_dim {}",
                feature.len(),
                self.config.feature_dim
            ))));
        }
        Ok(())
    }

    pub fn zero_state(&self, cols: usize) -> GenState {
        let n = self.config.hidden * cols;
        GenState { h: vec![0.0; n], c: vec![0.0; n], cols }
    }

    /// `d x B` matrix of projected image features.
    fn project_images(&self, features: &[&[f64]]) -> Result<Vec<f64>, GenError> {
        for f in features {
            self.check_feature(f)?;
        }
        let d = self.config.feature_dim;
        let b = features.len();
        let mut x = vec![0.0; d * b];
        for (c, f) in features.iter().enumerate() {
            for r in 0..d {
                x[r * b + c] = f[r];
            }
        }
        let mut z = crate::numcore::gemm(self.data(IMG_PROJ), &x, d, d, b);
        add_col_bias(&mut z, self.data(IMG_BIAS), b);
        Ok(z)
    }

    fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Vec<f64>, GenError> {
        let (d, u) = (self.config.feature_dim, self.config.vocab_size);
        if let Some(&bad) = tokens.iter().find(|&&t| t >= u) {
            return Err(GenError::Num(NumError::Index { index: bad, bound: u }));
        }
        let e = self.data(EMBED);
        let b = tokens.len();
        let mut x = vec![0.0; d * b];
        for r in 0..d {
            for (c, &t) in tokens.iter().enumerate() {
                x[r * b + c] = e[r * u + t];
            }
        }
        Ok(x)
    }

    fn lstm(&self, x: &[f64], state: &GenState) -> GenState {
        let (d, hd, b) = (self.config.feature_dim, self.config.hidden, state.cols);
        let zx = crate::numcore::gemm(self.data(LSTM_WX), x, 4 * hd, d, b);
        let zh = crate::numcore::gemm(self.data(LSTM_WH), &state.h, 4 * hd, hd, b);
        let mut z: Vec<f64> = zx.iter().zip(&zh).map(|(a, b)| a + b).collect();
        add_col_bias(&mut z, self.data(LSTM_B), b);
        let n = hd * b;
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for k in 0..n {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[n + k]);
            let g = z[2 * n + k].tanh();
            let o = sigmoid(z[3 * n + k]);
            let keep = f * state.c[k];
            let write = i * g;
            c[k] = keep + write;
            h[k] = o * c[k].tanh();
        }
        GenState { h, c, cols: b }
    }

    /// `U x B` logits for a state.
    fn logits(&self, state: &GenState) -> Vec<f64> {
        let (u, hd) = (self.config.vocab_size, self.config.hidden);
        let mut z = crate::numcore::gemm(self.data(OUT_PROJ), &state.h, u, hd, state.cols);
        add_col_bias(&mut z, self.data(OUT_BIAS), state.cols);
        z
    }

    /// One decoder step for a single column: returns unnormalized logits and
    /// the advanced state.
    pub fn gen_step(&self, input: GenInput<'_>, state: &GenState) -> Result<(Vec<f64>, GenState), GenError> {
        if state.cols != 1 || state.h.len() != self.config.hidden {
            return Err(GenError::Num(NumError::Dimension("gen_step expects a single-column state".into())));
        }
        let x = match input {
            GenInput::Feature(f) => self.project_images(&[f])?,
            GenInput::Token(t) => self.embed_tokens(&[t])?,
        };
        let next = self.lstm(&x, state);
        Ok((self.logits(&next), next))
    }

    /// Runs the image step and the BOS step for a batch of features. Returns
    /// per-column log-probabilities of the first word and the state.
    pub fn start_batch(&self, features: &[&[f64]]) -> Result<(Vec<Vec<f64>>, GenState), GenError> {
        let b = features.len();
        let x = self.project_images(features)?;
        let s0 = self.lstm(&x, &self.zero_state(b));
        self.advance_batch(&s0, &vec![BOS; b])
    }

    /// Consumes one token per column; returns per-column log-probabilities.
    pub fn advance_batch(&self, state: &GenState, tokens: &[TokenId]) -> Result<(Vec<Vec<f64>>, GenState), GenError> {
        if tokens.len() != state.cols {
            return Err(GenError::Num(NumError::Dimension(format!(
                "{} tokens for {} state columns",
                tokens.len(),
                state.cols
            ))));
        }
        let x = self.embed_tokens(tokens)?;
        let next = self.lstm(&x, state);
        let logits = self.logits(&next);
        Ok((columns_log_softmax(&logits, self.config.vocab_size, next.cols), next))
    }

    /// Records the parameters on a tape.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GenGraph {
        let vars = if trainable { self.params.bind(tape) } else { self.params.bind_frozen(tape) };
        GenGraph { vars, config: self.config }
    }
}

impl GenState {
    pub fn column(&self, col: usize) -> GenState {
        GenState { h: take_col(&self.h, self.cols, col), c: take_col(&self.c, self.cols, col), cols: 1 }
    }

    /// Stacks single-column states side by side.
    pub fn stack(parts: &[&GenState]) -> GenState {
        let b = parts.len();
        let hd = parts.first().map_or(0, |p| p.h.len());
        let mut h = vec![0.0; hd * b];
        let mut c = vec![0.0; hd * b];
        for (col, p) in parts.iter().enumerate() {
            for r in 0..hd {
                h[r * b + col] = p.h[r];
                c[r * b + col] = p.c[r];
            }
        }
        GenState { h, c, cols: b }
    }

    /// Keeps the listed columns, in order.
    pub fn select(&self, cols: &[usize]) -> GenState {
        let parts: Vec<GenState> = cols.iter().map(|&c| self.column(c)).collect();
        GenState::stack(&parts.iter().collect::<Vec<_>>())
    }
}

fn take_col(m: &[f64], cols: usize, col: usize) -> Vec<f64> {
    m.iter().skip(col).step_by(cols).copied().collect()
}

fn add_col_bias(z: &mut [f64], bias: &[f64], cols: usize) {
    for (r, b) in bias.iter().enumerate() {
        for v in &mut z[r * cols..(r + 1) * cols] {
            *v += b;
        }
    }
}

fn columns_log_softmax(logits: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..cols)
        .map(|c| {
            let col: Vec<f64> = (0..rows).map(|r| logits[r * cols + c]).collect();
            log_softmax(&col)
        })
        .collect()
}

/// Generator parameters recorded on a tape, with batched step functions.
pub struct GenGraph {
    vars: Vec<Var>,
    config: GenConfig,
}

impl GenGraph {
    /// Wraps externally recorded parameter handles, in slot order.
    pub fn from_vars(config: GenConfig, vars: Vec<Var>) -> Result<Self, GenError> {
        if vars.len() != 8 {
            return Err(GenError::Config(format!("expected 8 parameter handles, got {}", vars.len())));
        }
        Ok(Self { vars, config })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Image step for `features: d x B`; returns `(h, c)`.
    pub fn start(&self, tape: &mut Tape, features: Var) -> Result<(Var, Var), GenError> {
        let b = tape.shape(features).get(1).copied().unwrap_or(1);
        let x = tape.matmul(self.vars[IMG_PROJ], features)?;
        let x = tape.add_col_bias(x, self.vars[IMG_BIAS])?;
        let zeros = Tensor::zeros(&[self.config.hidden, b]);
        let h = tape.constant(zeros.clone());
        let c = tape.constant(zeros);
        Ok(self.lstm(tape, x, h, c)?)
    }

    fn lstm(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var), NumError> {
        let p = crate::numcore::LstmVars { w_x: self.vars[LSTM_WX], w_h: self.vars[LSTM_WH], bias: self.vars[LSTM_B] };
        crate::numcore::lstm_cell(tape, x, h, c, &p)
    }

    /// Consumes `tokens` (one per column); returns `U x B` logits and the
    /// new `(h, c)`.
    pub fn step(&self, tape: &mut Tape, tokens: &[TokenId], h: Var, c: Var) -> Result<(Var, Var, Var), GenError> {
        let x = tape.gather_cols(self.vars[EMBED], tokens)?;
        let (h, c) = self.lstm(tape, x, h, c)?;
        let z = tape.matmul(self.vars[OUT_PROJ], h)?;
        let logits = tape.add_col_bias(z, self.vars[OUT_BIAS])?;
        Ok((logits, h, c))
    }
}

/// `d x B` tensor with one feature per column.
pub fn feature_matrix(features: &[&[f64]]) -> Result<Tensor, GenError> {
    let b = features.len();
    if b == 0 {
        return Err(GenError::Config("empty feature batch".into()));
    }
    let d = features[0].len();
    let mut data = vec![0.0; d * b];
    for (c, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(GenError::Num(NumError::Dimension("ragged feature batch".into())));
        }
        for r in 0..d {
            data[r * b + c] = f[r];
        }
    }
    Ok(Tensor::matrix(d, b, data)?)
}
