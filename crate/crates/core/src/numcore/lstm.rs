use super::{NumError, Tape, Var};

/// Tape handles for one LSTM layer: `w_x: 4H x D`, `w_h: 4H x H`, `bias: 4H`.
/// Gate rows are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
}

/// Standard LSTM step without peepholes. Works on single columns (`x: D`,
/// `h, c: H`) and on batches (`x: D x B`, `h, c: H x B`).
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var), NumError> {
    let hidden = tape.shape(p.w_h)[1];
    let zx = tape.matmul(p.w_x, x)?;
    let zh = tape.matmul(p.w_h, h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_col_bias(z, p.bias)?;
    let zi = tape.slice_rows(z, 0, hidden)?;
    let zf = tape.slice_rows(z, hidden, hidden)?;
    let zg = tape.slice_rows(z, 2 * hidden, hidden)?;
    let zo = tape.slice_rows(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}
