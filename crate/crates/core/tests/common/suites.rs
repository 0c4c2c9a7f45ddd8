//! One function per acceptance criterion. Each returns a verdict with a
//! one-line summary of what it measured.

use std::collections::BTreeMap;
use std::time::Instant;

use advcap_core::advtrain::{default_grid, run_sweep, scst_train, Event, LogRecord, StopAt, SweepGrid, TrainConfig, Trainer};
use advcap_core::checkpoint::Checkpoint;
use advcap_core::discriminator::{disc_loss, DiscConfig, DiscKind, Discriminator, KernelSpec};
use advcap_core::generator::{beam_search, ensemble_decode, greedy_decode, score_sequence, Generator};
use advcap_core::metrics::{bleu, cider, rouge_l, sentence_bleu, BleuLevel, CiderVariant, IdfTable};
use advcap_core::rng::SeededRng;
use advcap_core::textdata::{assemble_pairs, Caption, Example, PairTriple, EOS};

use super::fixtures::{desk_corpus, small_config, small_corpus, tiny_generator, uniform};
use super::gradients;
use super::oracles::{self, crafted, Corpus, Lexicon};

pub const METRIC_TOL: f64 = 1e-9;
pub const GRADIENT_BUDGET_SECS: f64 = 60.0;
pub const SCST_MIN_GAIN: f64 = 0.05;
pub const SCST_BUDGET_SECS: f64 = 15.0 * 60.0;
pub const ZERO_LOSS_TOL: f64 = 1e-12;
pub const MIN_BALANCED_ACCURACY: f64 = 0.8;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

pub fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let cases = gradients::cases();
    for (i, case) in cases.iter().enumerate() {
        let (failed, report) = gradients::run_case(case, 1000 + i as u64);
        worst = worst.max(report.max_rel_err);
        if failed > 0 {
            failures.push(format!("{} ({failed} of {}, rel {:.2e})", case.name, gradients::INSTANCES, report.max_rel_err));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < GRADIENT_BUDGET_SECS;
    let mut detail = format!(
        "{} cases x {} instances, worst rel err {worst:.2e}, {secs:.1}s",
        cases.len(),
        gradients::INSTANCES
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; failing: {}", failures.join(", ")));
    }
    Verdict::new(pass, detail)
}

/// Library score and oracle score of every metric on every crafted case.
pub struct MetricComparison {
    pub metric: &'static str,
    pub case: usize,
    pub library: f64,
    pub oracle: f64,
}

pub fn metric_comparisons() -> Vec<MetricComparison> {
    let c = crafted();
    let mut lex = Lexicon::default();
    let image_ids: Vec<Vec<Vec<usize>>> = c.images.iter().map(|refs| refs.iter().map(|r| lex.encode(r)).collect()).collect();
    let idf = IdfTable::build(&image_ids);
    let corpus = Corpus { images: c.images.clone() };
    let mut out = Vec::new();
    for (k, &(cand, img)) in c.cases.iter().enumerate() {
        let refs = &c.images[img];
        let cand_ids = lex.encode(cand);
        let ref_ids = &image_ids[img];
        let mut push = |metric, library, oracle| out.push(MetricComparison { metric, case: k, library, oracle });
        for (n, name) in [(1, "BLEU1"), (2, "BLEU2"), (3, "BLEU3"), (4, "BLEU4")] {
            push(name, sentence_bleu(&cand_ids, ref_ids, n).unwrap(), oracles::sentence_bleu(cand, refs, n));
        }
        push("ROUGE_L", rouge_l(&cand_ids, ref_ids), oracles::rouge_l(cand, refs));
        push("CIDER", cider(&cand_ids, ref_ids, &idf, CiderVariant::Plain), corpus.cider(cand, refs, false));
        push("CIDER_D", cider(&cand_ids, ref_ids, &idf, CiderVariant::D), corpus.cider(cand, refs, true));
    }
    // corpus-level BLEU pools every case
    let pairs: Vec<(&str, Vec<&str>)> = c.cases.iter().map(|&(cand, img)| (cand, c.images[img].clone())).collect();
    let cands: Vec<Vec<usize>> = c.cases.iter().map(|&(cand, _)| lex.encode(cand)).collect();
    let refsets: Vec<Vec<Vec<usize>>> = c.cases.iter().map(|&(_, img)| image_ids[img].clone()).collect();
    for (n, name) in [(1, "corpus BLEU1"), (2, "corpus BLEU2"), (3, "corpus BLEU3"), (4, "corpus BLEU4")] {
        out.push(MetricComparison {
            metric: name,
            case: usize::MAX,
            library: bleu(&cands, &refsets, n, BleuLevel::Corpus).unwrap(),
            oracle: oracles::corpus_bleu(&pairs, n),
        });
    }
    out
}

pub fn metric_oracle_suite() -> Verdict {
    let c = crafted();
    let rows = metric_comparisons();
    let mut problems = Vec::new();
    let mut worst = 0.0f64;
    for r in &rows {
        let diff = (r.library - r.oracle).abs();
        worst = worst.max(diff);
        if !(diff <= METRIC_TOL) {
            problems.push(format!("{} case {}: {} vs {}", r.metric, r.case, r.library, r.oracle));
        }
        let expected = if c.identity.contains(&r.case) {
            match r.metric {
                "CIDER" | "CIDER_D" => Some(10.0),
                _ => Some(1.0),
            }
        } else if c.disjoint.contains(&r.case) {
            Some(0.0)
        } else {
            None
        };
        if let Some(e) = expected {
            if !((r.library - e).abs() <= METRIC_TOL) {
                problems.push(format!("{} case {} should be {e}, got {}", r.metric, r.case, r.library));
            }
        }
    }
    let per_metric = c.cases.len();
    let detail = format!(
        "7 metrics x {per_metric} crafted pairs + pooled corpus BLEU, max |lib - oracle| {worst:.1e}{}",
        if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
    );
    Verdict::new(problems.is_empty() && per_metric >= 10, detail)
}

pub const LAMBDA_ZERO_STEPS: usize = 100;

/// Trainer at `lambda` after pretraining on the small corpus.
pub fn pretrained_small(lambda: f64) -> Trainer {
    let (vocab, train, val) = small_corpus();
    let config = TrainConfig { lambda, ..small_config() };
    let mut t = Trainer::new(config, vocab.len(), train, val).unwrap();
    t.run(StopAt::PretrainDisc, &mut |_| Ok(())).unwrap();
    t
}

/// Runs `steps` adversarial g/d iterations on the trainer and the same
/// number of discriminator-free SCST steps from the same starting point.
/// Returns whether the generators end bit-identical.
pub fn against_plain_scst(mut t: Trainer, steps: usize) -> bool {
    let mut gen: Generator = t.gen.clone();
    let mut adam = t.gen_adam().clone();
    let mut rng = t.g_rng().clone();
    let scorer = t.scorer().clone();
    let train = t.train_data().to_vec();
    for _ in 0..steps {
        t.g_step().unwrap();
        t.d_step().unwrap();
    }
    scst_train(&mut gen, &mut adam, &train, &scorer, t.config.batch, steps, &mut rng).unwrap();
    gen.params.bit_equal(&t.gen.params)
}

pub fn lambda_zero_degeneration() -> Verdict {
    let same = against_plain_scst(pretrained_small(0.0), LAMBDA_ZERO_STEPS);
    // the comparison must be able to fail: at lambda 0.3 the paths split
    let control = against_plain_scst(pretrained_small(0.3), LAMBDA_ZERO_STEPS);
    Verdict::new(
        same && !control,
        format!(
            "after {LAMBDA_ZERO_STEPS} g_steps: lambda=0 bit-identical = {same}; lambda=0.3 control identical = {control}"
        ),
    )
}

fn random_triple(rng: &mut SeededRng, u: usize, d: usize, t_max: usize, n: usize) -> PairTriple {
    let cap = |rng: &mut SeededRng| {
        let len = 1 + rng.below(t_max - 1);
        let mut ids: Vec<usize> = (0..len).map(|_| 4 + rng.below(u - 4)).collect();
        ids.push(EOS);
        Caption::from_ids(ids)
    };
    let ex: Vec<Example> = (0..n)
        .map(|i| Example { image_id: i as u64, feature: uniform(rng, &[d], 1.0).into_data(), references: vec![cap(rng), cap(rng)] })
        .collect();
    let fakes: Vec<Caption> = (0..n).map(|_| cap(rng)).collect();
    let refs: Vec<&Example> = ex.iter().collect();
    assemble_pairs(&refs, &fakes, t_max, rng).unwrap()
}

/// Worst `|loss - 2 ln 2|` over both discriminator kinds with zeroed
/// output layers.
pub fn zero_output_loss_error() -> f64 {
    let mut rng = SeededRng::from_seed(5);
    let mut worst = 0.0f64;
    for kind in [DiscKind::Cnn, DiscKind::Rnn] {
        for _ in 0..5 {
            let config = DiscConfig {
                kind,
                vocab_size: 30,
                feature_dim: 8,
                t_max: 16,
                kernels: KernelSpec::desk(),
                hidden: 12,
            };
            let mut disc = Discriminator::init(config, &mut rng, 0.5).unwrap();
            disc.zero_output();
            let triple = random_triple(&mut rng, 30, 8, 16, 6);
            let loss = disc_loss(&disc, &triple).unwrap();
            worst = worst.max((loss - 2.0 * std::f64::consts::LN_2).abs());
        }
    }
    worst
}

fn mean_val_loss(t: &mut Trainer) -> f64 {
    let triples = t.val_triples().unwrap().to_vec();
    triples.iter().map(|tr| disc_loss(&t.disc, tr).unwrap()).sum::<f64>() / triples.len() as f64
}

/// The desk-scale run shared by the discriminator and SCST criteria.
pub struct DeskRun {
    pub val_loss_before: f64,
    pub val_loss_after: f64,
    pub balanced_accuracy: f64,
    pub mle_cider_d: f64,
    pub final_cider_d: f64,
    pub final_iter: u64,
    pub secs: f64,
}

pub fn desk_config() -> TrainConfig {
    // early stopping off: the criterion is stated at a fixed budget
    TrainConfig { patience: 0, ..TrainConfig::default() }
}

pub fn desk_run() -> DeskRun {
    let (vocab, train, val) = desk_corpus();
    let start = Instant::now();
    let mut t = Trainer::new(desk_config(), vocab.len(), train, val).unwrap();
    t.run(StopAt::PretrainGen, &mut |_| Ok(())).unwrap();
    let val_loss_before = mean_val_loss(&mut t);
    let mut evals: Vec<(String, String, u64, f64)> = Vec::new();
    let mut hook = |e: Event<'_>| {
        if let Event::Log(LogRecord::Eval { phase, metric, iter, value, .. }) = e {
            evals.push((phase.clone(), metric.clone(), *iter, *value));
        }
        Ok(())
    };
    t.run(StopAt::PretrainDisc, &mut hook).unwrap();
    let val_loss_after = mean_val_loss(&mut t);
    t.run(StopAt::End, &mut hook).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = |phase: &str, metric: &str| {
        evals.iter().rev().find(|e| e.0 == phase && e.1 == metric).cloned().expect("evaluation logged")
    };
    let mle = evals.iter().find(|e| e.0 == "adversarial" && e.2 == 0).cloned().expect("iteration-0 evaluation");
    let fin = last("adversarial", "CIDER_D");
    DeskRun {
        val_loss_before,
        val_loss_after,
        balanced_accuracy: last("disc_pretrain", "BALANCED_ACCURACY").3,
        mle_cider_d: mle.3,
        final_cider_d: fin.3,
        final_iter: fin.2,
        secs,
    }
}

pub fn disc_loss_sanity(run: &DeskRun) -> Verdict {
    let zero_err = zero_output_loss_error();
    let pass = zero_err <= ZERO_LOSS_TOL
        && run.val_loss_after < run.val_loss_before
        && run.balanced_accuracy > MIN_BALANCED_ACCURACY;
    Verdict::new(
        pass,
        format!(
            "zero-output |loss - 2ln2| {zero_err:.1e}; held-out loss {:.4} -> {:.4} after 10 epochs; balanced accuracy {:.3}",
            run.val_loss_before, run.val_loss_after, run.balanced_accuracy
        ),
    )
}

pub fn scst_improvement(run: &DeskRun) -> Verdict {
    let gain = run.final_cider_d / run.mle_cider_d - 1.0;
    let pass = run.final_iter == 1000 && gain >= SCST_MIN_GAIN && run.secs < SCST_BUDGET_SECS;
    Verdict::new(
        pass,
        format!(
            "held-out CIDEr-D {:.4} (MLE) -> {:.4} after {} iterations, {:+.1}% (need +{:.0}%), total {:.0}s",
            run.mle_cider_d,
            run.final_cider_d,
            run.final_iter,
            100.0 * gain,
            100.0 * SCST_MIN_GAIN,
            run.secs
        ),
    )
}

/// Best sequence by brute force: every EOS-terminated prefix up to
/// `t_max` plus every full-length sequence.
pub fn exhaustive_best(gen: &Generator, feature: &[f64]) -> (Vec<usize>, f64) {
    let u = gen.vocab_size();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 1..=gen.t_max() {
        let mut next = Vec::new();
        for prefix in &frontier {
            for tok in 0..u {
                let mut ids = prefix.clone();
                ids.push(tok);
                if tok == EOS || len == gen.t_max() {
                    let s = score_sequence(gen, feature, &ids).unwrap().log_prob;
                    if best.as_ref().is_none_or(|b| s > b.1 || (s == b.1 && ids < b.0)) {
                        best = Some((ids, s));
                    }
                } else {
                    next.push(ids);
                }
            }
        }
        frontier = next;
    }
    best.expect("at least one sequence")
}

pub fn decoder_exactness() -> Verdict {
    let mut beam1_mismatch = 0;
    for seed in 0..100u64 {
        let mut rng = SeededRng::from_seed(10_000 + seed);
        let u = 5 + rng.below(8);
        let gen = tiny_generator(seed, u, 4, 6, 8, 1.5);
        let f = uniform(&mut rng, &[4], 1.0).into_data();
        if beam_search(&gen, &f, 1).unwrap().caption != greedy_decode(&gen, &f).unwrap().caption {
            beam1_mismatch += 1;
        }
    }
    let mut exhaustive_mismatch = 0;
    for seed in 0..30u64 {
        let mut rng = SeededRng::from_seed(20_000 + seed);
        let gen = tiny_generator(500 + seed, 4, 3, 4, 3, 2.0);
        let f = uniform(&mut rng, &[3], 1.0).into_data();
        let (ids, score) = exhaustive_best(&gen, &f);
        for beam in [64, 100] {
            let got = beam_search(&gen, &f, beam).unwrap();
            if got.caption.ids != ids || (got.log_prob - score).abs() > 1e-12 {
                exhaustive_mismatch += 1;
            }
        }
    }
    let mut ensemble_mismatch = 0;
    for seed in 0..20u64 {
        let mut rng = SeededRng::from_seed(30_000 + seed);
        let gen = tiny_generator(900 + seed, 9, 4, 6, 8, 1.0);
        let f = uniform(&mut rng, &[4], 1.0).into_data();
        for beam in [1, 3, 5] {
            let single = beam_search(&gen, &f, beam).unwrap();
            let ens = ensemble_decode(&[&gen, &gen, &gen], &f, beam).unwrap();
            if single != ens {
                ensemble_mismatch += 1;
            }
        }
    }
    let pass = beam1_mismatch == 0 && exhaustive_mismatch == 0 && ensemble_mismatch == 0;
    Verdict::new(
        pass,
        format!(
            "beam=1 vs greedy mismatches {beam1_mismatch}/100; beam>=64 vs exhaustive (U=4, T_max=3) {exhaustive_mismatch}/60; identical ensemble vs single {ensemble_mismatch}/60"
        ),
    )
}

/// Full log of a run as JSON lines, plus the serialized checkpoint taken
/// at every resumable point and the log length at that moment.
pub struct Recorded {
    pub log: Vec<String>,
    pub checkpoints: Vec<(usize, Vec<u8>)>,
    pub final_bytes: Vec<u8>,
}

pub fn record(mut t: Trainer) -> Recorded {
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    t.run(StopAt::End, &mut |e| {
        match e {
            Event::Log(r) => log.push(serde_json::to_string(r).unwrap()),
            Event::Checkpoint(tr) => checkpoints.push((log.len(), tr.to_checkpoint(serde_json::Value::Null).to_bytes())),
        }
        Ok(())
    })
    .unwrap();
    let final_bytes = t.to_checkpoint(serde_json::Value::Null).to_bytes();
    Recorded { log, checkpoints, final_bytes }
}

pub fn small_trainer() -> Trainer {
    let (vocab, train, val) = small_corpus();
    Trainer::new(small_config(), vocab.len(), train, val).unwrap()
}

/// Resumes from checkpoint `index` of `full` and checks the continuation
/// reproduces the rest of the log and the final state bitwise.
pub fn resume_matches(full: &Recorded, index: usize) -> bool {
    let (_, train, val) = small_corpus();
    let (at, bytes) = &full.checkpoints[index];
    let ck = Checkpoint::from_bytes(bytes).unwrap();
    let t = Trainer::from_checkpoint(&ck, train, val).unwrap();
    let rest = record(t);
    rest.log[..] == full.log[*at..] && rest.final_bytes == full.final_bytes
}

pub fn determinism_and_resume() -> Verdict {
    let a = record(small_trainer());
    let b = record(small_trainer());
    let same_log = a.log == b.log && a.final_bytes == b.final_bytes;
    let n = a.checkpoints.len();
    let picks: Vec<usize> = [0, 1, n / 3, n / 2, 2 * n / 3, n - 2].into_iter().filter(|&i| i < n).collect();
    let resumed = picks.iter().filter(|&&i| resume_matches(&a, i)).count();
    Verdict::new(
        same_log && resumed == picks.len(),
        format!(
            "two seeded runs: {} log lines, identical = {same_log}; resumes reproducing the trajectory {resumed}/{} (of {n} checkpoints)",
            a.log.len(),
            picks.len()
        ),
    )
}

fn reversed(g: &SweepGrid) -> SweepGrid {
    let mut r = g.clone();
    r.lambdas.reverse();
    r.metrics.reverse();
    r.steps.reverse();
    r
}

pub fn sweep_shape() -> Verdict {
    let grid = default_grid();
    let base = small_config();
    let cells = grid.cells(&base).unwrap();
    let mut families: BTreeMap<String, usize> = BTreeMap::new();
    for c in &cells {
        *families.entry(c.family.clone()).or_default() += 1;
    }
    let shape_ok = families.get("lambda") == Some(&5)
        && families.get("metric") == Some(&4)
        && families.get("steps") == Some(&4)
        && cells.len() == 13;

    let (vocab, train, val) = small_corpus();
    let forward = run_sweep(&train, &val, vocab.len(), &base, &grid, 4).unwrap();
    let backward = run_sweep(&train, &val, vocab.len(), &base, &reversed(&grid), 2).unwrap();
    let by_key = |rows: &[advcap_core::advtrain::SweepRow]| -> BTreeMap<String, Vec<u64>> {
        rows.iter()
            .map(|r| (r.key.clone(), r.scores.values().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let order_ok = forward.succeeded() == 13 && by_key(&forward.rows) == by_key(&backward.rows);
    Verdict::new(
        shape_ok && order_ok,
        format!(
            "families {families:?}; all 13 cells ran = {}; reversed grid and thread count give bitwise-equal rows by key = {}",
            forward.succeeded() == 13,
            by_key(&forward.rows) == by_key(&backward.rows)
        ),
    )
}
