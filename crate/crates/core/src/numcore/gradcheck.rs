use super::{NumError, Tape, Tensor, Var};

/// Outcome of comparing tape gradients against central differences.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-6)`; the
/// floor keeps coordinates whose true gradient is zero from dividing
/// round-off by round-off.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// False when two evaluations at the same point disagreed bitwise; the
    /// comparison is unreliable in that case and the check fails.
    pub deterministic: bool,
    pub passed: bool,
}

const REL_FLOOR: f64 = 1e-6;

/// Single-input form of [`finite_diff_check_many`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumError>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tol, None)
}

/// Checks the gradient of scalar `f` with respect to every input tensor.
///
/// `max_coords` limits how many evenly spaced coordinates of each input are
/// perturbed; `None` checks all of them.
pub fn finite_diff_check_many<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(NumError::Contract(format!("checked function must be scalar, got {:?}", v.shape())));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let trainable: Vec<Tensor> = inputs.iter().map(|t| t.detached().with_grad()).collect();
    let vars: Vec<Var> = trainable.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let base_a = eval(inputs)?;
    let base_b = eval(inputs)?;
    let deterministic = base_a.to_bits() == base_b.to_bits();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        worst: None,
        deterministic,
        passed: false,
    };
    let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detached).collect();
    for (which, var) in vars.iter().enumerate() {
        let numel = inputs[which].numel();
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; numel]);
        let count = max_coords.map_or(numel, |m| m.min(numel));
        for c in 0..count {
            let idx = if count == numel { c } else { c * numel / count };
            let orig = probe[which].data()[idx];
            probe[which].data_mut()[idx] = orig + step;
            let plus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - step;
            let minus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((which, idx));
            }
        }
    }
    report.passed = deterministic && report.max_rel_err <= tol;
    Ok(report)
}
