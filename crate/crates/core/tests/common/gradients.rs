//! Finite-difference cases for every tape primitive and the full networks.

use advcap_core::discriminator::{disc_loss_graph, DiscConfig, DiscKind, Discriminator, KernelSpec};
use advcap_core::generator::{GenConfig, GenGraph, Generator};
use advcap_core::numcore::{finite_diff_check_many, lstm_cell, GradCheckReport, LstmVars, NumError, Tape, Tensor, Var};
use advcap_core::rng::SeededRng;
use advcap_core::textdata::{assemble_pairs, Caption, Example, EOS};

use super::fixtures::{away_from_zero, uniform};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 20;

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, NumError>>;

/// One random instance: a scalar function and the point to check it at.
pub struct Instance {
    pub f: Loss,
    pub inputs: Vec<Tensor>,
}

pub struct Case {
    pub name: &'static str,
    pub draw: fn(&mut SeededRng) -> Instance,
}

/// Fixed pseudo-random linear read-out that turns any output into a scalar.
pub fn probe(tape: &mut Tape, y: Var) -> Result<Var, NumError> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let m = tape.mul(y, w)?;
    Ok(tape.sum(m))
}

fn dim(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn inst(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var, NumError> + 'static) -> Instance {
    Instance { f: Box::new(f), inputs }
}

fn matmul(rng: &mut SeededRng) -> Instance {
    let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
    inst(vec![uniform(rng, &[m, k], 1.0), uniform(rng, &[k, n], 1.0)], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        probe(t, y)
    })
}

fn matvec(rng: &mut SeededRng) -> Instance {
    let (m, k) = (dim(rng, 1, 5), dim(rng, 1, 5));
    inst(vec![uniform(rng, &[m, k], 1.0), uniform(rng, &[k], 1.0)], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        probe(t, y)
    })
}

fn binary(rng: &mut SeededRng, which: u8) -> Instance {
    let shape = [dim(rng, 1, 4), dim(rng, 1, 4)];
    inst(vec![uniform(rng, &shape, 1.0), uniform(rng, &shape, 1.0)], move |t, v| {
        let y = match which {
            0 => t.add(v[0], v[1])?,
            1 => t.sub(v[0], v[1])?,
            _ => t.mul(v[0], v[1])?,
        };
        probe(t, y)
    })
}

fn add(rng: &mut SeededRng) -> Instance {
    binary(rng, 0)
}

fn sub(rng: &mut SeededRng) -> Instance {
    binary(rng, 1)
}

fn mul(rng: &mut SeededRng) -> Instance {
    binary(rng, 2)
}

fn add_col_bias(rng: &mut SeededRng) -> Instance {
    let (m, n) = (dim(rng, 1, 5), dim(rng, 1, 5));
    inst(vec![uniform(rng, &[m, n], 1.0), uniform(rng, &[m], 1.0)], |t, v| {
        let y = t.add_col_bias(v[0], v[1])?;
        probe(t, y)
    })
}

fn affine(rng: &mut SeededRng) -> Instance {
    let scale = 4.0 * rng.uniform() - 2.0;
    let shift = rng.uniform();
    let shape = [dim(rng, 1, 6)];
    inst(vec![uniform(rng, &shape, 1.0)], move |t, v| {
        let y = t.affine(v[0], scale, shift);
        probe(t, y)
    })
}

fn relu(rng: &mut SeededRng) -> Instance {
    let shape = [dim(rng, 1, 4), dim(rng, 1, 4)];
    inst(vec![away_from_zero(rng, &shape, 0.05, 1.0)], |t, v| {
        let y = t.relu(v[0]);
        probe(t, y)
    })
}

fn sigmoid(rng: &mut SeededRng) -> Instance {
    let shape = [dim(rng, 1, 4), dim(rng, 1, 4)];
    inst(vec![uniform(rng, &shape, 3.0)], |t, v| {
        let y = t.sigmoid(v[0]);
        probe(t, y)
    })
}

fn tanh(rng: &mut SeededRng) -> Instance {
    let shape = [dim(rng, 1, 4), dim(rng, 1, 4)];
    inst(vec![uniform(rng, &shape, 2.0)], |t, v| {
        let y = t.tanh(v[0]);
        probe(t, y)
    })
}

fn conv_bank(rng: &mut SeededRng) -> Instance {
    let (d, len) = (dim(rng, 1, 4), dim(rng, 2, 7));
    let window = dim(rng, 1, len);
    let n = dim(rng, 1, 4);
    let inputs = vec![uniform(rng, &[d, len], 1.0), uniform(rng, &[n, d * window], 1.0), uniform(rng, &[n], 0.5)];
    inst(inputs, move |t, v| {
        let y = t.conv_bank(v[0], v[1], v[2], window)?;
        probe(t, y)
    })
}

fn conv_full_height(rng: &mut SeededRng) -> Instance {
    let (d, len) = (dim(rng, 1, 4), dim(rng, 2, 7));
    let l = dim(rng, 1, len);
    // positive bias keeps most positions on the linear side of the ReLU
    let bias = Tensor::vector(vec![0.5 + rng.uniform()]);
    inst(vec![uniform(rng, &[d, len], 1.0), uniform(rng, &[d, l], 1.0), bias], |t, v| {
        let y = t.conv_full_height(v[0], v[1], v[2])?;
        probe(t, y)
    })
}

fn max_over_time_rows(rng: &mut SeededRng) -> Instance {
    let shape = [dim(rng, 1, 4), dim(rng, 1, 6)];
    inst(vec![uniform(rng, &shape, 1.0)], |t, v| {
        let y = t.max_over_time_rows(v[0])?;
        probe(t, y)
    })
}

fn max_over_time(rng: &mut SeededRng) -> Instance {
    let shape = [dim(rng, 1, 8)];
    inst(vec![uniform(rng, &shape, 1.0)], |t, v| t.max_over_time(v[0]))
}

fn gather_cols(rng: &mut SeededRng) -> Instance {
    let (d, u) = (dim(rng, 1, 4), dim(rng, 2, 6));
    let ids: Vec<usize> = (0..dim(rng, 1, 7)).map(|_| rng.below(u)).collect();
    inst(vec![uniform(rng, &[d, u], 1.0)], move |t, v| {
        let y = t.gather_cols(v[0], &ids)?;
        probe(t, y)
    })
}

fn concat_cols(rng: &mut SeededRng) -> Instance {
    let rows = dim(rng, 1, 4);
    let parts: Vec<Tensor> = (0..dim(rng, 1, 3)).map(|_| {
        let c = dim(rng, 1, 3);
        uniform(rng, &[rows, c], 1.0)
    }).collect();
    inst(parts, |t, v| {
        let y = t.concat_cols(v)?;
        probe(t, y)
    })
}

fn concat_rows(rng: &mut SeededRng) -> Instance {
    let cols = dim(rng, 1, 4);
    let parts: Vec<Tensor> = (0..dim(rng, 1, 3)).map(|_| {
        let r = dim(rng, 1, 3);
        uniform(rng, &[r, cols], 1.0)
    }).collect();
    inst(parts, |t, v| {
        let y = t.concat_rows(v)?;
        probe(t, y)
    })
}

fn slice_rows(rng: &mut SeededRng) -> Instance {
    let (m, n) = (dim(rng, 1, 6), dim(rng, 1, 3));
    let start = rng.below(m);
    let len = dim(rng, 1, m - start);
    inst(vec![uniform(rng, &[m, n], 1.0)], move |t, v| {
        let y = t.slice_rows(v[0], start, len)?;
        probe(t, y)
    })
}

fn softmax_xent_cols(rng: &mut SeededRng) -> Instance {
    let (u, b) = (dim(rng, 2, 6), dim(rng, 1, 4));
    let targets: Vec<usize> = (0..b).map(|_| rng.below(u)).collect();
    let weights: Vec<f64> = (0..b).map(|_| 2.0 * rng.uniform() - 0.5).collect();
    inst(vec![uniform(rng, &[u, b], 2.0)], move |t, v| t.softmax_xent_cols(v[0], &targets, &weights))
}

fn softmax_xent(rng: &mut SeededRng) -> Instance {
    let u = dim(rng, 2, 8);
    let target = rng.below(u);
    inst(vec![uniform(rng, &[u], 2.0)], move |t, v| t.softmax_xent(v[0], target))
}

fn sum(rng: &mut SeededRng) -> Instance {
    let shape = [dim(rng, 1, 4), dim(rng, 1, 4)];
    inst(vec![uniform(rng, &shape, 1.0)], |t, v| {
        let s = t.sum(v[0]);
        let sq = t.mul(s, s)?;
        Ok(t.affine(sq, 0.5, 0.0))
    })
}

fn mean(rng: &mut SeededRng) -> Instance {
    let shape = [dim(rng, 1, 6)];
    inst(vec![uniform(rng, &shape, 1.0)], |t, v| {
        let s = t.mean(v[0]);
        t.mul(s, s)
    })
}

fn clamp(rng: &mut SeededRng) -> Instance {
    let n = dim(rng, 1, 8);
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let x = 4.0 * rng.uniform() - 2.0;
            if (x.abs() - 1.0).abs() < 0.05 { x * 1.1 } else { x }
        })
        .collect();
    inst(vec![Tensor::vector(data)], |t, v| {
        let y = t.clamp(v[0], -1.0, 1.0);
        probe(t, y)
    })
}

fn ln(rng: &mut SeededRng) -> Instance {
    let n = dim(rng, 1, 6);
    let data: Vec<f64> = (0..n).map(|_| 0.2 + 2.8 * rng.uniform()).collect();
    inst(vec![Tensor::vector(data)], |t, v| {
        let y = t.ln(v[0]);
        probe(t, y)
    })
}

fn lstm(rng: &mut SeededRng) -> Instance {
    let (d, h, b) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 3));
    let inputs = vec![
        uniform(rng, &[d, b], 1.0),
        uniform(rng, &[h, b], 1.0),
        uniform(rng, &[h, b], 1.0),
        uniform(rng, &[4 * h, d], 0.8),
        uniform(rng, &[4 * h, h], 0.8),
        uniform(rng, &[4 * h], 0.5),
    ];
    inst(inputs, |t, v| {
        let p = LstmVars { w_x: v[3], w_h: v[4], bias: v[5] };
        let (h, c) = lstm_cell(t, v[0], v[1], v[2], &p)?;
        let a = probe(t, h)?;
        let b = probe(t, c)?;
        t.add(a, b)
    })
}

fn generator_logits(rng: &mut SeededRng) -> Instance {
    let config = GenConfig { vocab_size: dim(rng, 4, 7), feature_dim: dim(rng, 2, 4), hidden: dim(rng, 2, 4), t_max: 4 };
    let gen = Generator::init(config, rng, 0.8).unwrap();
    let b = dim(rng, 1, 3);
    let steps: Vec<Vec<usize>> = (0..3).map(|_| (0..b).map(|_| rng.below(config.vocab_size)).collect()).collect();
    let targets: Vec<Vec<usize>> = (0..3).map(|_| (0..b).map(|_| rng.below(config.vocab_size)).collect()).collect();
    let mut inputs: Vec<Tensor> = gen.params.tensors().iter().map(Tensor::detached).collect();
    inputs.push(uniform(rng, &[config.feature_dim, b], 1.0));
    inst(inputs, move |t, v| {
        let graph = GenGraph::from_vars(config, v[..8].to_vec()).map_err(|e| NumError::Contract(e.to_string()))?;
        let (mut h, mut c) = graph.start(t, v[8]).map_err(|e| NumError::Contract(e.to_string()))?;
        let mut terms = Vec::new();
        for (tokens, tgt) in steps.iter().zip(&targets) {
            let (logits, h2, c2) = graph.step(t, tokens, h, c).map_err(|e| NumError::Contract(e.to_string()))?;
            h = h2;
            c = c2;
            terms.push(t.softmax_xent_cols(logits, tgt, &vec![1.0; tgt.len()])?);
        }
        let s = t.concat_rows(&terms)?;
        Ok(t.sum(s))
    })
}

fn small_disc(rng: &mut SeededRng, kind: DiscKind) -> Discriminator {
    let config = DiscConfig {
        kind,
        vocab_size: dim(rng, 5, 8),
        feature_dim: dim(rng, 2, 4),
        t_max: 5,
        kernels: KernelSpec { groups: vec![(1, 2), (2, 2), (3, 1), (6, 1)] },
        hidden: dim(rng, 2, 4),
    };
    Discriminator::init(config, rng, 0.6).unwrap()
}

fn random_caption(rng: &mut SeededRng, vocab_size: usize, t_max: usize) -> Caption {
    let len = dim(rng, 1, t_max - 1);
    let mut ids: Vec<usize> = (0..len).map(|_| 4 + rng.below(vocab_size - 4)).collect();
    ids.push(EOS);
    Caption::from_ids(ids)
}

fn disc_forward(rng: &mut SeededRng, kind: DiscKind) -> Instance {
    let disc = small_disc(rng, kind);
    let b = dim(rng, 1, 3);
    let (u, t_max, d) = (disc.config.vocab_size, disc.config.t_max, disc.config.feature_dim);
    let caps: Vec<Vec<usize>> = (0..b).map(|_| random_caption(rng, u, t_max).padded(t_max)).collect();
    let features = uniform(rng, &[d, b], 1.0);
    let inputs: Vec<Tensor> = disc.params.tensors().iter().map(Tensor::detached).collect();
    inst(inputs, move |t, v| {
        let p = disc.forward(t, v, &features, &caps).map_err(|e| NumError::Contract(e.to_string()))?;
        probe(t, p)
    })
}

fn cnn_forward(rng: &mut SeededRng) -> Instance {
    disc_forward(rng, DiscKind::Cnn)
}

fn rnn_forward(rng: &mut SeededRng) -> Instance {
    disc_forward(rng, DiscKind::Rnn)
}

fn disc_loss(rng: &mut SeededRng, kind: DiscKind) -> Instance {
    let disc = small_disc(rng, kind);
    let (u, t_max, d) = (disc.config.vocab_size, disc.config.t_max, disc.config.feature_dim);
    let n = dim(rng, 2, 3);
    let examples: Vec<Example> = (0..n)
        .map(|i| Example {
            image_id: i as u64,
            feature: uniform(rng, &[d], 1.0).into_data(),
            references: (0..2).map(|_| random_caption(rng, u, t_max)).collect(),
        })
        .collect();
    let fakes: Vec<Caption> = (0..n).map(|_| random_caption(rng, u, t_max)).collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let triple = assemble_pairs(&refs, &fakes, t_max, rng).unwrap();
    let inputs: Vec<Tensor> = disc.params.tensors().iter().map(Tensor::detached).collect();
    inst(inputs, move |t, v| disc_loss_graph(&disc, t, v, &triple).map_err(|e| NumError::Contract(e.to_string())))
}

fn cnn_loss(rng: &mut SeededRng) -> Instance {
    disc_loss(rng, DiscKind::Cnn)
}

fn rnn_loss(rng: &mut SeededRng) -> Instance {
    disc_loss(rng, DiscKind::Rnn)
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "matmul", draw: matmul },
        Case { name: "matmul (vector)", draw: matvec },
        Case { name: "add", draw: add },
        Case { name: "sub", draw: sub },
        Case { name: "mul", draw: mul },
        Case { name: "add_col_bias", draw: add_col_bias },
        Case { name: "affine", draw: affine },
        Case { name: "relu", draw: relu },
        Case { name: "sigmoid", draw: sigmoid },
        Case { name: "tanh", draw: tanh },
        Case { name: "conv_bank", draw: conv_bank },
        Case { name: "conv_full_height", draw: conv_full_height },
        Case { name: "max_over_time_rows", draw: max_over_time_rows },
        Case { name: "max_over_time", draw: max_over_time },
        Case { name: "gather_cols", draw: gather_cols },
        Case { name: "concat_cols", draw: concat_cols },
        Case { name: "concat_rows", draw: concat_rows },
        Case { name: "slice_rows", draw: slice_rows },
        Case { name: "softmax_xent_cols", draw: softmax_xent_cols },
        Case { name: "softmax_xent", draw: softmax_xent },
        Case { name: "sum", draw: sum },
        Case { name: "mean", draw: mean },
        Case { name: "clamp", draw: clamp },
        Case { name: "ln", draw: ln },
        Case { name: "lstm_cell", draw: lstm },
        Case { name: "generator logits", draw: generator_logits },
        Case { name: "cnn discriminator forward", draw: cnn_forward },
        Case { name: "rnn discriminator forward", draw: rnn_forward },
        Case { name: "cnn discriminator loss", draw: cnn_loss },
        Case { name: "rnn discriminator loss", draw: rnn_loss },
    ]
}

/// Worst report over `INSTANCES` draws of one case.
pub fn run_case(case: &Case, seed: u64) -> (usize, GradCheckReport) {
    let mut rng = SeededRng::from_seed(seed);
    let mut worst: Option<GradCheckReport> = None;
    let mut failed = 0;
    for _ in 0..INSTANCES {
        let Instance { f, inputs } = (case.draw)(&mut rng);
        let r = finite_diff_check_many(|t, v| f(t, v), &inputs, STEP, TOL, None)
            .unwrap_or_else(|e| panic!("{}: {e}", case.name));
        if !r.passed {
            failed += 1;
        }
        if worst.as_ref().is_none_or(|w| r.max_rel_err > w.max_rel_err || !r.passed) {
            worst = Some(r);
        }
    }
    (failed, worst.expect("at least one instance"))
}
