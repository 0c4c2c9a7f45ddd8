//! Define-by-run reverse-mode tape.
//!
//! Every primitive evaluates eagerly, stores its output on the tape and
//! remembers just enough context to push gradients back to its inputs.
//! A tape is meant to be built for one forward pass and consumed by one
//! call to [`Tape::backward`].

use super::tensor::Tensor;
use super::NumError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddColBias(Var, Var),
    Affine(Var, f64),
    Act(Var, Activation),
    ConvBank { eps: Var, kernels: Var, bias: Var, window: usize },
    MaxRows { input: Var, argmax: Vec<usize> },
    GatherCols { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { input: Var, start: usize },
    SoftmaxXent { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    Sum(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
    Ln(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `target.grad` (no-op if unreachable).
    pub fn accumulate_into(&self, var: Var, target: &mut Tensor) -> Result<(), NumError> {
        match self.get(var) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn dims(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dims2()
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        let value = Tensor::new(shape, data).expect("primitive produced inconsistent shape");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor.detached(), op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node { value: tensor.detached(), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if self.shape(a).len() != 2 || k != k2 {
            return Err(NumError::Dimension(format!(
                "matmul of {:?} by {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = gemm(self.data(a), self.data(b), m, k, n);
        let shape = if self.shape(b).len() < 2 { vec![m] } else { vec![m, n] };
        Ok(self.push(shape, out, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "add")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "sub")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "mul")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    /// `a[m x n] + bias[m]` broadcast along columns.
    pub fn add_col_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (m, n) = self.dims(a);
        if self.value(bias).numel() != m {
            return Err(NumError::Dimension(format!(
                "column bias {:?} for {:?}",
                self.shape(bias),
                self.shape(a)
            )));
        }
        let (av, bv) = (self.data(a), self.data(bias));
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(av[i * n..(i + 1) * n].iter().map(|x| x + bv[i]));
        }
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddColBias(a, bias), &[a, bias]))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.data(a).iter().map(|x| scale * x + shift).collect();
        self.push(self.shape(a).to_vec(), out, Op::Affine(a, scale), &[a])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = self
            .data(a)
            .iter()
            .map(|&x| match kind {
                Activation::Relu => x.max(0.0),
                Activation::Sigmoid => sigmoid(x),
                Activation::Tanh => x.tanh(),
            })
            .collect();
        self.push(self.shape(a).to_vec(), out, Op::Act(a, kind), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    /// Bank of full-height convolutions with fused ReLU.
    ///
    /// `kernels` holds `n` kernels of shape `d x window`, flattened row-major
    /// into an `n x (d * window)` matrix; `bias` has `n` entries. Output is
    /// `n x (L - window + 1)` with
    /// `out[k, i] = relu(sum_{r, j} K_k[r, j] * eps[r, i + j] + bias[k])`.
    pub fn conv_bank(&mut self, eps: Var, kernels: Var, bias: Var, window: usize) -> Result<Var, NumError> {
        let (d, len) = self.dims(eps);
        if window == 0 || window > len {
            return Err(NumError::WindowTooWide { window, len });
        }
        let n = self.value(bias).numel();
        let width = d * window;
        if self.value(kernels).numel() != n * width {
            return Err(NumError::Dimension(format!(
                "kernel bank {:?} with bias {:?} does not fit feature map {:?} at window {window}",
                self.shape(kernels),
                self.shape(bias),
                self.shape(eps)
            )));
        }
        let positions = len - window + 1;
        let (ev, kv, bv) = (self.data(eps), self.data(kernels), self.data(bias));
        let mut out = vec![0.0; n * positions];
        for k in 0..n {
            let kern = &kv[k * width..(k + 1) * width];
            for i in 0..positions {
                let mut acc = 0.0;
                for r in 0..d {
                    let krow = &kern[r * window..(r + 1) * window];
                    let erow = &ev[r * len + i..r * len + i + window];
                    for (kw, ew) in krow.iter().zip(erow) {
                        acc += kw * ew;
                    }
                }
                out[k * positions + i] = (acc + bv[k]).max(0.0);
            }
        }
        Ok(self.push(vec![n, positions], out, Op::ConvBank { eps, kernels, bias, window }, &[eps, kernels, bias]))
    }

    /// One full-height kernel `d x l` slid over `eps: d x L`, ReLU fused.
    pub fn conv_full_height(&mut self, eps: Var, kernel: Var, bias: Var) -> Result<Var, NumError> {
        let (d, _) = self.dims(eps);
        let kshape = self.shape(kernel).to_vec();
        if kshape.len() != 2 || kshape[0] != d {
            return Err(NumError::Dimension(format!(
                "kernel {kshape:?} must have height {d}"
            )));
        }
        if self.value(bias).numel() != 1 {
            return Err(NumError::Dimension("conv bias must be a scalar".into()));
        }
        let bank = self.conv_bank(eps, kernel, bias, kshape[1])?;
        let positions = self.dims(bank).1;
        // Same memory layout, reported as a vector.
        self.nodes[bank.0].value = Tensor::vector(self.nodes[bank.0].value.data().to_vec());
        debug_assert_eq!(self.value(bank).numel(), positions);
        Ok(bank)
    }

    /// Row-wise max over the time axis: `n x K -> n`. Gradient goes to the
    /// first argmax of each row.
    pub fn max_over_time_rows(&mut self, input: Var) -> Result<Var, NumError> {
        if self.shape(input).len() != 2 {
            return Err(NumError::Dimension(format!("expected a matrix, got {:?}", self.shape(input))));
        }
        let (n, k) = self.dims(input);
        let data = self.data(input);
        let mut argmax = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let row = &data[r * k..(r + 1) * k];
            let (idx, best) = first_argmax(row);
            argmax.push(idx);
            out.push(best);
        }
        Ok(self.push(vec![n], out, Op::MaxRows { input, argmax }, &[input]))
    }

    /// Max of a vector, returned as a scalar.
    pub fn max_over_time(&mut self, input: Var) -> Result<Var, NumError> {
        if self.shape(input).len() != 1 {
            return Err(NumError::Dimension(format!("expected a vector, got {:?}", self.shape(input))));
        }
        let data = self.data(input);
        let (idx, best) = first_argmax(data);
        Ok(self.push(vec![], vec![best], Op::MaxRows { input, argmax: vec![idx] }, &[input]))
    }

    /// Column lookup: `table[d x U]`, `ids[T]` -> `d x T`.
    pub fn gather_cols(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let (d, u) = self.dims(table);
        if ids.is_empty() {
            return Err(NumError::Dimension("gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= u) {
            return Err(NumError::Index { index: bad, bound: u });
        }
        let tv = self.data(table);
        let t = ids.len();
        let mut out = vec![0.0; d * t];
        for r in 0..d {
            for (c, &id) in ids.iter().enumerate() {
                out[r * t + c] = tv[r * u + id];
            }
        }
        Ok(self.push(vec![d, t], out, Op::GatherCols { table, ids: ids.to_vec() }, &[table]))
    }

    /// Horizontal concatenation; every input must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts.first().ok_or_else(|| NumError::Dimension("empty concat".into()))?;
        let rows = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(NumError::Dimension(format!("concat_cols of {rows} and {r} rows")));
            }
            total += c;
        }
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let (_, c) = self.dims(p);
            let pv = self.data(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c].copy_from_slice(&pv[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Vertical concatenation. Scalars and vectors stack into a vector.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts.first().ok_or_else(|| NumError::Dimension("empty concat".into()))?;
        let cols = self.dims(first).1;
        let all_vec = parts.iter().all(|&p| self.shape(p).len() < 2);
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(NumError::Dimension(format!("concat_rows of {cols} and {c} columns")));
            }
            out.extend_from_slice(self.data(p));
            rows += r;
        }
        let shape = if all_vec { vec![rows] } else { vec![rows, cols] };
        Ok(self.push(shape, out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..start + len`. Vectors stay vectors.
    pub fn slice_rows(&mut self, input: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let (m, n) = self.dims(input);
        if len == 0 || start + len > m {
            return Err(NumError::Dimension(format!("row slice {start}..{} of {m} rows", start + len)));
        }
        let out = self.data(input)[start * n..(start + len) * n].to_vec();
        let shape = if self.shape(input).len() < 2 { vec![len] } else { vec![len, n] };
        Ok(self.push(shape, out, Op::SliceRows { input, start }, &[input]))
    }

    /// `sum_b weights[b] * -log softmax(logits[:, b])[targets[b]]` over the
    /// columns of `logits: V x B`.
    pub fn softmax_xent_cols(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var, NumError> {
        let (v, b) = self.dims(logits);
        if targets.len() != b || weights.len() != b {
            return Err(NumError::Dimension(format!(
                "{} targets and {} weights for {b} columns",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(NumError::Index { index: bad, bound: v });
        }
        let lv = self.data(logits);
        let mut probs = vec![0.0; v * b];
        let mut loss = 0.0;
        let mut col = vec![0.0; v];
        for c in 0..b {
            for r in 0..v {
                col[r] = lv[r * b + c];
            }
            let lsm = log_softmax(&col);
            for r in 0..v {
                probs[r * b + c] = lsm[r].exp();
            }
            if weights[c] != 0.0 {
                loss += weights[c] * -lsm[targets[c]];
            }
        }
        let op = Op::SoftmaxXent { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs };
        Ok(self.push(vec![], vec![loss], op, &[logits]))
    }

    /// `-log softmax(logits)[target]` for a single logit vector.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var, NumError> {
        if self.shape(logits).len() != 1 {
            return Err(NumError::Dimension(format!("expected logit vector, got {:?}", self.shape(logits))));
        }
        self.softmax_xent_cols(logits, &[target], &[1.0])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(vec![], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.data(a).iter().map(|x| x.clamp(lo, hi)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Clamp { input: a, lo, hi }, &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|x| x.ln()).collect();
        self.push(self.shape(a).to_vec(), out, Op::Ln(a), &[a])
    }

    /// Reverse sweep from a scalar `loss`. A tape supports exactly one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumError> {
        if self.consumed {
            return Err(NumError::State("backward already ran on this tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(NumError::Contract("loss does not belong to this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(NumError::Contract(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.needs(*a) {
                    // dA = dC * B^T
                    let bv = self.data(*b);
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = dot(grow, brow);
                        }
                    }
                    accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = A^T * dC
                    let av = self.data(*a);
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let coef = av[i * k + p];
                            if coef != 0.0 {
                                axpy(&mut db[p * n..(p + 1) * n], coef, grow);
                            }
                        }
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                accumulate_if(self, grads, *a, g);
                accumulate_if(self, grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate_if(self, grads, *a, g);
                if self.needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d: Vec<f64> = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d: Vec<f64> = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::AddColBias(a, bias) => {
                accumulate_if(self, grads, *a, g);
                if self.needs(*bias) {
                    let (m, n) = self.dims(*a);
                    let db: Vec<f64> = (0..m).map(|i| g[i * n..(i + 1) * n].iter().sum()).collect();
                    accumulate(grads, *bias, &db);
                }
            }
            Op::Affine(a, scale) => {
                if self.needs(*a) {
                    let d: Vec<f64> = g.iter().map(|x| x * scale).collect();
                    accumulate(grads, *a, &d);
                }
            }
            Op::Act(a, kind) => {
                if self.needs(*a) {
                    let d: Vec<f64> = match kind {
                        Activation::Relu => g
                            .iter()
                            .zip(self.data(*a))
                            .map(|(x, &inp)| if inp > 0.0 { *x } else { 0.0 })
                            .collect(),
                        Activation::Sigmoid => g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect(),
                        Activation::Tanh => g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect(),
                    };
                    accumulate(grads, *a, &d);
                }
            }
            Op::ConvBank { eps, kernels, bias, window } => {
                let (d, len) = self.dims(*eps);
                let n = self.value(*bias).numel();
                let w = *window;
                let width = d * w;
                let positions = len - w + 1;
                let pre: Vec<f64> = g.iter().zip(out).map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }).collect();
                let (ev, kv) = (self.data(*eps), self.data(*kernels));
                if self.needs(*kernels) {
                    let mut dk = vec![0.0; n * width];
                    for k in 0..n {
                        for i in 0..positions {
                            let gp = pre[k * positions + i];
                            if gp == 0.0 {
                                continue;
                            }
                            for r in 0..d {
                                let erow = &ev[r * len + i..r * len + i + w];
                                axpy(&mut dk[k * width + r * w..k * width + (r + 1) * w], gp, erow);
                            }
                        }
                    }
                    accumulate(grads, *kernels, &dk);
                }
                if self.needs(*eps) {
                    let mut de = vec![0.0; d * len];
                    for k in 0..n {
                        let kern = &kv[k * width..(k + 1) * width];
                        for i in 0..positions {
                            let gp = pre[k * positions + i];
                            if gp == 0.0 {
                                continue;
                            }
                            for r in 0..d {
                                axpy(&mut de[r * len + i..r * len + i + w], gp, &kern[r * w..(r + 1) * w]);
                            }
                        }
                    }
                    accumulate(grads, *eps, &de);
                }
                if self.needs(*bias) {
                    let db: Vec<f64> = (0..n).map(|k| pre[k * positions..(k + 1) * positions].iter().sum()).collect();
                    accumulate(grads, *bias, &db);
                }
            }
            Op::MaxRows { input, argmax } => {
                if self.needs(*input) {
                    let numel = self.value(*input).numel();
                    let k = numel / argmax.len();
                    let mut d = vec![0.0; numel];
                    for (r, &j) in argmax.iter().enumerate() {
                        d[r * k + j] = g[r];
                    }
                    accumulate(grads, *input, &d);
                }
            }
            Op::GatherCols { table, ids } => {
                if self.needs(*table) {
                    let (d, u) = self.dims(*table);
                    let t = ids.len();
                    let mut dt = vec![0.0; d * u];
                    for r in 0..d {
                        for (c, &id) in ids.iter().enumerate() {
                            dt[r * u + id] += g[r * t + c];
                        }
                    }
                    accumulate(grads, *table, &dt);
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.needs(p) {
                        let mut d = vec![0.0; rows * c];
                        for r in 0..rows {
                            d[r * c..(r + 1) * c].copy_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(grads, p, &d);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.needs(p) {
                        accumulate(grads, p, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { input, start } => {
                if self.needs(*input) {
                    let numel = self.value(*input).numel();
                    let n = self.dims(*input).1;
                    let mut d = vec![0.0; numel];
                    d[start * n..start * n + g.len()].copy_from_slice(g);
                    accumulate(grads, *input, &d);
                }
            }
            Op::SoftmaxXent { logits, targets, weights, probs } => {
                if self.needs(*logits) {
                    let (v, b) = self.dims(*logits);
                    let mut d = vec![0.0; v * b];
                    for c in 0..b {
                        let w = weights[c] * g[0];
                        if w == 0.0 {
                            continue;
                        }
                        for r in 0..v {
                            d[r * b + c] = w * probs[r * b + c];
                        }
                        d[targets[c] * b + c] -= w;
                    }
                    accumulate(grads, *logits, &d);
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    let d = vec![g[0]; self.value(*a).numel()];
                    accumulate(grads, *a, &d);
                }
            }
            Op::Clamp { input, lo, hi } => {
                if self.needs(*input) {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(self.data(*input))
                        .map(|(x, &v)| if v >= *lo && v <= *hi { *x } else { 0.0 })
                        .collect();
                    accumulate(grads, *input, &d);
                }
            }
            Op::Ln(a) => {
                if self.needs(*a) {
                    let d: Vec<f64> = g.iter().zip(self.data(*a)).map(|(x, v)| x / v).collect();
                    accumulate(grads, *a, &d);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, delta: &[f64]) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_if(tape: &Tape, grads: &mut [Option<Vec<f64>>], var: Var, delta: &[f64]) {
    if tape.needs(var) {
        accumulate(grads, var, delta);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major `m x k` by `k x n`. Each output element accumulates over `k` in
/// increasing order, independent of `n`, so batching columns never changes
/// per-column results.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let coef = a[i * k + p];
            axpy(orow, coef, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

fn first_argmax(row: &[f64]) -> (usize, f64) {
    let mut idx = 0;
    let mut best = row[0];
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            idx = j;
        }
    }
    (idx, best)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-softmax of one logit vector.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|x| x - lse).collect()
}
