use crate::numcore::{init_uniform, lstm_cell, LstmVars, ParamSet, Tape, Tensor, Var};
use crate::rng::SeededRng;
use crate::textdata::TokenId;

use super::DiscError;

const EMBED: usize = 0;
const W_X: usize = 1;
const W_H: usize = 2;
const BIAS: usize = 3;
const H0: usize = 4;
const OUT_W: usize = 5;
const OUT_B: usize = 6;

pub(crate) fn init(d: usize, u: usize, hidden: usize, rng: &mut SeededRng, scale: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("rnn.embed", init_uniform(rng, &[d, u], scale));
    p.push("rnn.lstm.w_x", init_uniform(rng, &[4 * hidden, d], scale));
    p.push("rnn.lstm.w_h", init_uniform(rng, &[4 * hidden, hidden], scale));
    p.push("rnn.lstm.bias", Tensor::zeros(&[4 * hidden]));
    // Trainable initial hidden state, stored as a column.
    p.push("rnn.h0", init_uniform(rng, &[hidden, 1], scale));
    p.push("rnn.out.w", init_uniform(rng, &[1, hidden], scale));
    p.push("rnn.out.b", Tensor::zeros(&[1]));
    p
}

/// `1 x B` probabilities: the image feeds step 0, each caption token one
/// more step, and the last hidden state goes through the output layer.
pub(crate) fn forward(tape: &mut Tape, vars: &[Var], features: &Tensor, captions: &[Vec<TokenId>]) -> Result<Var, DiscError> {
    let (_, b) = features.dims2();
    if captions.len() != b {
        return Err(DiscError::Config(format!("{} captions for {b} feature columns", captions.len())));
    }
    let len = captions[0].len();
    if captions.iter().any(|c| c.len() != len) {
        return Err(DiscError::Config("captions must be padded to one length".into()));
    }
    let hidden = tape.shape(vars[H0])[0];
    let cell = LstmVars { w_x: vars[W_X], w_h: vars[W_H], bias: vars[BIAS] };
    let feats = tape.constant(features.detached());
    let mut h = tape.gather_cols(vars[H0], &vec![0; b])?;
    let mut c = tape.constant(Tensor::zeros(&[hidden, b]));
    (h, c) = lstm_cell(tape, feats, h, c, &cell)?;
    for t in 0..len {
        let tokens: Vec<TokenId> = captions.iter().map(|cap| cap[t]).collect();
        let x = tape.gather_cols(vars[EMBED], &tokens)?;
        (h, c) = lstm_cell(tape, x, h, c, &cell)?;
    }
    let z = tape.matmul(vars[OUT_W], h)?;
    let z = tape.add_col_bias(z, vars[OUT_B])?;
    Ok(tape.sigmoid(z))
}
