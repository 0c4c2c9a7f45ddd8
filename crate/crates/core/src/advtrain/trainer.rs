use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{scst_update, evaluate_generator, DecodeMode, GStepLog, MetricScorer, Scorer, TrainConfig, TrainError};
use crate::checkpoint::Checkpoint;
use crate::discriminator::{
    accuracy, disc_epoch, disc_step, epoch_triples, DiscConfig, Discriminator, KernelSpec,
};
use crate::generator::{mle_epoch, sample_batch, GenConfig, Generator};
use crate::metrics::{build_idf, IdfTable, MetricId};
use crate::numcore::{AdamState, ParamSet, Tensor};
use crate::rng::{RngState, SeededRng};
use crate::textdata::{make_pair_batches, Caption, Example, PairTriple, TextError};

const STREAM_INIT: u64 = 0;
const STREAM_G: u64 = 1;
const STREAM_D: u64 = 2;
const STREAM_FAKES: u64 = 3;
const STREAM_VAL: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PretrainGen,
    PretrainDisc,
    Adversarial,
    Done,
}

/// Where [`Trainer::run`] returns: after the named phase completes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopAt {
    PretrainGen,
    PretrainDisc,
    End,
}

impl StopAt {
    fn first_excluded(self) -> Phase {
        match self {
            StopAt::PretrainGen => Phase::PretrainDisc,
            StopAt::PretrainDisc => Phase::Adversarial,
            StopAt::End => Phase::Done,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step {
        phase: String,
        iter: u64,
        loss: f64,
        mean_p: Option<f64>,
        mean_s: Option<f64>,
        mean_adv: Option<f64>,
    },
    Eval {
        phase: String,
        iter: u64,
        split: String,
        metric: String,
        value: f64,
    },
}

impl LogRecord {
    fn step(phase: &str, iter: u64, loss: f64) -> Self {
        LogRecord::Step { phase: phase.into(), iter, loss, mean_p: None, mean_s: None, mean_adv: None }
    }

    fn eval(phase: &str, iter: u64, metric: &str, value: f64) -> Self {
        LogRecord::Eval { phase: phase.into(), iter, split: "val".into(), metric: metric.into(), value }
    }
}

pub enum Event<'a> {
    Log(&'a LogRecord),
    /// Emitted after every epoch, every held-out evaluation and every phase
    /// change; the trainer is in a resumable state.
    Checkpoint(&'a Trainer),
}

/// The whole state of a training run: both networks, their optimizers,
/// both random streams and the phase bookkeeping.
pub struct Trainer {
    pub config: TrainConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    gen_adam: AdamState,
    disc_adam: AdamState,
    g_rng: SeededRng,
    d_rng: SeededRng,
    phase: Phase,
    /// Epochs or iterations finished in the current phase.
    progress: u64,
    best_val: Option<f64>,
    evals_since_best: usize,
    train: Vec<Example>,
    val: Vec<Example>,
    scorer: MetricScorer,
    val_idf: IdfTable,
    fakes: Option<Vec<Caption>>,
    val_triples: Option<Vec<PairTriple>>,
}

fn check_data(config: &TrainConfig, train: &[Example], val: &[Example]) -> Result<usize, TrainError> {
    if train.len() < config.batch {
        return Err(TrainError::config("batch", format!("{} exceeds the {} training examples", config.batch, train.len())));
    }
    if val.len() < 2 {
        return Err(TrainError::config("val", "held-out split needs at least two examples"));
    }
    let d = train[0].feature.len();
    if train.iter().chain(val).any(|e| e.feature.len() != d) {
        return Err(TrainError::config("feature_dim", "train and val features differ in width"));
    }
    Ok(d)
}

fn gen_config(config: &TrainConfig, vocab_size: usize, d: usize) -> GenConfig {
    GenConfig { vocab_size, feature_dim: d, hidden: config.hidden, t_max: config.t_max }
}

fn disc_config(config: &TrainConfig, vocab_size: usize, d: usize) -> DiscConfig {
    DiscConfig {
        kind: config.disc_kind,
        vocab_size,
        feature_dim: d,
        t_max: config.t_max,
        kernels: KernelSpec::preset(config.kernel_preset),
        hidden: config.disc_hidden,
    }
}

fn check_finite(params: &ParamSet, phase: Phase) -> Result<(), TrainError> {
    match params.first_non_finite() {
        Some(name) => Err(TrainError::NonFinite { tensor: name.to_string(), phase: format!("{phase:?}") }),
        None => Ok(()),
    }
}

impl Trainer {
    /// Fresh run: random initialization of both networks.
    pub fn new(config: TrainConfig, vocab_size: usize, train: Vec<Example>, val: Vec<Example>) -> Result<Self, TrainError> {
        config.validate()?;
        let d = check_data(&config, &train, &val)?;
        let mut init = SeededRng::from_seed_stream(config.seed, STREAM_INIT);
        let gen = Generator::init(gen_config(&config, vocab_size, d), &mut init, config.init_scale)?;
        let disc = Discriminator::init(disc_config(&config, vocab_size, d), &mut init, config.init_scale)?;
        Ok(Self::assemble(config, gen, disc, train, val))
    }

    fn assemble(config: TrainConfig, gen: Generator, disc: Discriminator, train: Vec<Example>, val: Vec<Example>) -> Self {
        let gen_adam = AdamState::new(config.adam(), &gen.params);
        let disc_adam = AdamState::new(config.adam(), &disc.params);
        let scorer = MetricScorer { idf: build_idf(&train), q: config.metric_q };
        let val_idf = build_idf(&val);
        Self {
            g_rng: SeededRng::from_seed_stream(config.seed, STREAM_G),
            d_rng: SeededRng::from_seed_stream(config.seed, STREAM_D),
            config,
            gen,
            disc,
            gen_adam,
            disc_adam,
            phase: Phase::PretrainGen,
            progress: 0,
            best_val: None,
            evals_since_best: 0,
            train,
            val,
            scorer,
            val_idf,
            fakes: None,
            val_triples: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn progress(&self) -> u64 {
        self.progress
    }

    pub fn g_rng(&self) -> &SeededRng {
        &self.g_rng
    }

    pub fn gen_adam(&self) -> &AdamState {
        &self.gen_adam
    }

    pub fn train_data(&self) -> &[Example] {
        &self.train
    }

    pub fn val_data(&self) -> &[Example] {
        &self.val
    }

    pub fn scorer(&self) -> &MetricScorer {
        &self.scorer
    }

    pub fn val_idf(&self) -> &IdfTable {
        &self.val_idf
    }

    /// Greedy-decoded held-out CIDEr-D.
    pub fn val_cider_d(&self) -> Result<f64, TrainError> {
        let (_, s) = evaluate_generator(&self.gen, &self.val, &[MetricId::CiderD], DecodeMode::Greedy, &self.val_idf)?;
        Ok(s[&MetricId::CiderD])
    }

    /// The fixed fake set `S_f`: one sample per training image from the
    /// MLE-pretrained generator.
    fn fakes(&mut self) -> Result<&[Caption], TrainError> {
        if self.fakes.is_none() {
            let mut rng = SeededRng::from_seed_stream(self.config.seed, STREAM_FAKES);
            let feats: Vec<&[f64]> = self.train.iter().map(|e| e.feature.as_slice()).collect();
            let caps = sample_batch(&self.gen, &feats, &mut rng)?.into_iter().map(|d| d.caption).collect();
            self.fakes = Some(caps);
        }
        Ok(self.fakes.as_deref().expect("just filled"))
    }

    /// Held-out pair triples for discriminator accuracy.
    pub fn val_triples(&mut self) -> Result<&[PairTriple], TrainError> {
        if self.val_triples.is_none() {
            let mut rng = SeededRng::from_seed_stream(self.config.seed, STREAM_VAL);
            let feats: Vec<&[f64]> = self.val.iter().map(|e| e.feature.as_slice()).collect();
            let fakes: Vec<Caption> = sample_batch(&self.gen, &feats, &mut rng)?.into_iter().map(|d| d.caption).collect();
            let batch = self.config.batch.min(self.val.len());
            self.val_triples = Some(epoch_triples(&self.val, &fakes, batch, self.config.t_max, &mut rng)?);
        }
        Ok(self.val_triples.as_deref().expect("just filled"))
    }

    /// One self-critical generator update on a random mini-batch.
    pub fn g_step(&mut self) -> Result<(GStepLog, f64), TrainError> {
        let picks = sample(&mut self.g_rng, self.train.len(), self.config.batch).into_vec();
        let batch: Vec<&Example> = picks.iter().map(|&i| &self.train[i]).collect();
        let out = scst_update(
            &mut self.gen,
            &mut self.gen_adam,
            &batch,
            Some(&self.disc),
            &self.scorer,
            self.config.lambda,
            &mut self.g_rng,
        )?;
        Ok((GStepLog::from_rewards(self.progress, &out.rewards), out.loss))
    }

    /// One discriminator update on freshly sampled fake captions.
    pub fn d_step(&mut self) -> Result<(f64, PairTriple), TrainError> {
        let gen = &self.gen;
        let sampler = |ex: &[&Example], rng: &mut SeededRng| -> Result<Vec<Caption>, TextError> {
            let feats: Vec<&[f64]> = ex.iter().map(|e| e.feature.as_slice()).collect();
            sample_batch(gen, &feats, rng)
                .map(|ds| ds.into_iter().map(|d| d.caption).collect())
                .map_err(|e| TextError::Config(e.to_string()))
        };
        let triple = make_pair_batches(&self.train, sampler, self.config.batch, self.config.t_max, &mut self.d_rng)?;
        let loss = disc_step(&mut self.disc, &mut self.disc_adam, &triple)?;
        Ok((loss, triple))
    }

    fn emit(hook: &mut dyn FnMut(Event<'_>) -> Result<(), TrainError>, rec: LogRecord) -> Result<(), TrainError> {
        hook(Event::Log(&rec))
    }

    /// Runs phases until `stop` is reached, calling `hook` with every log
    /// record and at every resumable point.
    pub fn run(&mut self, stop: StopAt, hook: &mut dyn FnMut(Event<'_>) -> Result<(), TrainError>) -> Result<(), TrainError> {
        while self.phase < stop.first_excluded() {
            match self.phase {
                Phase::PretrainGen => self.run_pretrain_gen(hook)?,
                Phase::PretrainDisc => self.run_pretrain_disc(hook)?,
                Phase::Adversarial => self.run_adversarial(hook)?,
                Phase::Done => break,
            }
        }
        Ok(())
    }

    fn run_pretrain_gen(&mut self, hook: &mut dyn FnMut(Event<'_>) -> Result<(), TrainError>) -> Result<(), TrainError> {
        while (self.progress as usize) < self.config.mle_epochs {
            let loss = mle_epoch(&mut self.gen, &mut self.gen_adam, &self.train, self.config.batch, &mut self.g_rng)?;
            check_finite(&self.gen.params, self.phase)?;
            let epoch = self.progress;
            self.progress += 1;
            Self::emit(hook, LogRecord::step("mle", epoch, loss))?;
            let v = self.val_cider_d()?;
            Self::emit(hook, LogRecord::eval("mle", epoch, MetricId::CiderD.name(), v))?;
            hook(Event::Checkpoint(self))?;
        }
        self.phase = Phase::PretrainDisc;
        self.progress = 0;
        self.disc_adam = AdamState::new(self.config.adam(), &self.disc.params);
        hook(Event::Checkpoint(self))
    }

    fn run_pretrain_disc(&mut self, hook: &mut dyn FnMut(Event<'_>) -> Result<(), TrainError>) -> Result<(), TrainError> {
        while (self.progress as usize) < self.config.disc_epochs {
            self.fakes()?;
            let fakes = self.fakes.take().expect("computed above");
            let res = disc_epoch(&mut self.disc, &mut self.disc_adam, &self.train, &fakes, self.config.batch, &mut self.d_rng);
            self.fakes = Some(fakes);
            let loss = res?;
            check_finite(&self.disc.params, self.phase)?;
            let epoch = self.progress;
            self.progress += 1;
            Self::emit(hook, LogRecord::step("disc_pretrain", epoch, loss))?;
            self.val_triples()?;
            let acc = accuracy(&self.disc, self.val_triples.as_deref().expect("computed above"))?;
            Self::emit(hook, LogRecord::eval("disc_pretrain", epoch, "BALANCED_ACCURACY", acc.balanced))?;
            hook(Event::Checkpoint(self))?;
        }
        self.phase = Phase::Adversarial;
        self.progress = 0;
        self.gen_adam = AdamState::new(self.config.adam(), &self.gen.params);
        self.disc_adam = AdamState::new(self.config.adam(), &self.disc.params);
        let v = self.val_cider_d()?;
        self.best_val = Some(v);
        self.evals_since_best = 0;
        Self::emit(hook, LogRecord::eval("adversarial", 0, MetricId::CiderD.name(), v))?;
        hook(Event::Checkpoint(self))
    }

    fn run_adversarial(&mut self, hook: &mut dyn FnMut(Event<'_>) -> Result<(), TrainError>) -> Result<(), TrainError> {
        while (self.progress as usize) < self.config.iterations {
            let iter = self.progress;
            for _ in 0..self.config.g_steps {
                let (g, loss) = self.g_step()?;
                check_finite(&self.gen.params, self.phase)?;
                Self::emit(
                    hook,
                    LogRecord::Step {
                        phase: "adv_g".into(),
                        iter,
                        loss,
                        mean_p: Some(g.mean_p),
                        mean_s: Some(g.mean_s),
                        mean_adv: Some(g.mean_adv),
                    },
                )?;
            }
            for _ in 0..self.config.d_steps {
                let (loss, _) = self.d_step()?;
                check_finite(&self.disc.params, self.phase)?;
                Self::emit(hook, LogRecord::step("adv_d", iter, loss))?;
            }
            self.progress += 1;
            let done = self.progress as usize == self.config.iterations;
            if self.progress as usize % self.config.eval_every == 0 || done {
                let v = self.val_cider_d()?;
                Self::emit(hook, LogRecord::eval("adversarial", self.progress, MetricId::CiderD.name(), v))?;
                if self.best_val.is_none_or(|b| v > b) {
                    self.best_val = Some(v);
                    self.evals_since_best = 0;
                } else {
                    self.evals_since_best += 1;
                }
                if self.config.patience > 0 && self.evals_since_best >= self.config.patience {
                    log::info!("early stop at iteration {} (best held-out CIDEr-D {:?})", self.progress, self.best_val);
                    break;
                }
                hook(Event::Checkpoint(self))?;
            }
        }
        self.phase = Phase::Done;
        hook(Event::Checkpoint(self))
    }

    /// Serializes the full state. `extra` is stored verbatim under
    /// `"extra"` (the CLI keeps the vocabulary there).
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let meta = json!({
            "kind": "trainer",
            "config": self.config,
            "gen_config": self.gen.config,
            "disc_config": self.disc.config,
            "phase": self.phase,
            "progress": self.progress,
            "best_val": self.best_val,
            "evals_since_best": self.evals_since_best,
            "g_rng": self.g_rng.state(),
            "d_rng": self.d_rng.state(),
            "gen_adam_steps": self.gen_adam.step_count,
            "disc_adam_steps": self.disc_adam.step_count,
            "extra": extra,
        });
        let mut ck = Checkpoint::new(meta);
        for (name, t) in self.gen.params.iter().chain(self.disc.params.iter()) {
            ck.push(name, t);
        }
        for (tag, adam, params) in [("gen", &self.gen_adam, &self.gen.params), ("disc", &self.disc_adam, &self.disc.params)] {
            for (slot, (name, t)) in params.iter().enumerate() {
                let shape = t.shape().to_vec();
                let m = Tensor::new(shape.clone(), adam.first_moment[slot].clone()).expect("moment matches shape");
                let v = Tensor::new(shape, adam.second_moment[slot].clone()).expect("moment matches shape");
                ck.push(format!("adam.{tag}.m.{name}"), &m);
                ck.push(format!("adam.{tag}.v.{name}"), &v);
            }
        }
        ck
    }

    /// Restores a run saved by [`to_checkpoint`](Self::to_checkpoint). The
    /// datasets must be the ones the run was started with.
    pub fn from_checkpoint(ck: &Checkpoint, train: Vec<Example>, val: Vec<Example>) -> Result<Self, TrainError> {
        let meta = &ck.metadata;
        let field = |key: &str| meta.get(key).cloned().ok_or_else(|| TrainError::config(key, "missing from checkpoint metadata"));
        let parse = |key: &str| -> Result<serde_json::Value, TrainError> { field(key) };
        if meta.get("kind").and_then(|k| k.as_str()) != Some("trainer") {
            return Err(TrainError::config("checkpoint", "not a trainer checkpoint"));
        }
        let config: TrainConfig = de("config", parse("config")?)?;
        config.validate()?;
        let d = check_data(&config, &train, &val)?;
        let gcfg: GenConfig = de("gen_config", parse("gen_config")?)?;
        let dcfg: DiscConfig = de("disc_config", parse("disc_config")?)?;
        if gcfg.feature_dim != d {
            return Err(TrainError::config("feature_dim", "checkpoint was trained on features of another width"));
        }
        let load_set = |reference: &ParamSet| -> Result<ParamSet, TrainError> {
            let mut out = ParamSet::new();
            for name in reference.names() {
                out.push(name.clone(), ck.tensor(name)?.clone());
            }
            Ok(out)
        };
        let gen_ref = Generator::zeros(gcfg)?;
        let disc_ref = Discriminator::init(dcfg.clone(), &mut SeededRng::from_seed(0), 0.0)?;
        let gen = Generator::from_params(gcfg, load_set(&gen_ref.params)?)?;
        let disc = Discriminator::from_params(dcfg, load_set(&disc_ref.params)?)?;
        let mut t = Self::assemble(config, gen, disc, train, val);
        for (tag, steps_key) in [("gen", "gen_adam_steps"), ("disc", "disc_adam_steps")] {
            let (adam, params) = if tag == "gen" { (&mut t.gen_adam, &t.gen.params) } else { (&mut t.disc_adam, &t.disc.params) };
            adam.step_count = de(steps_key, parse(steps_key)?)?;
            for (slot, name) in params.names().iter().enumerate() {
                adam.first_moment[slot] = ck.tensor(&format!("adam.{tag}.m.{name}"))?.data().to_vec();
                adam.second_moment[slot] = ck.tensor(&format!("adam.{tag}.v.{name}"))?.data().to_vec();
            }
        }
        let rng = |key: &str| -> Result<SeededRng, TrainError> {
            let state: RngState = de(key, parse(key)?)?;
            SeededRng::from_state(&state).map_err(|e| TrainError::config(key, e))
        };
        t.g_rng = rng("g_rng")?;
        t.d_rng = rng("d_rng")?;
        t.phase = de("phase", parse("phase")?)?;
        t.progress = de("progress", parse("progress")?)?;
        t.best_val = de("best_val", parse("best_val")?)?;
        t.evals_since_best = de("evals_since_best", parse("evals_since_best")?)?;
        Ok(t)
    }
}

fn de<T: serde::de::DeserializeOwned>(key: &str, v: serde_json::Value) -> Result<T, TrainError> {
    serde_json::from_value(v).map_err(|e| TrainError::config(key, format!("bad checkpoint metadata: {e}")))
}

/// Discriminator-free self-critical training: the reward is the language
/// score alone. Mini-batches are drawn exactly as [`Trainer::g_step`] does.
pub fn scst_train(
    gen: &mut Generator,
    adam: &mut AdamState,
    data: &[Example],
    scorer: &dyn Scorer,
    batch: usize,
    steps: usize,
    rng: &mut SeededRng,
) -> Result<Vec<GStepLog>, TrainError> {
    if batch == 0 || batch > data.len() {
        return Err(TrainError::config("batch", format!("{batch} does not fit {} examples", data.len())));
    }
    let mut log = Vec::with_capacity(steps);
    for iter in 0..steps {
        let picks = sample(&mut *rng, data.len(), batch).into_vec();
        let b: Vec<&Example> = picks.iter().map(|&i| &data[i]).collect();
        let out = scst_update(gen, adam, &b, None, scorer, 0.0, rng)?;
        log.push(GStepLog::from_rewards(iter as u64, &out.rewards));
    }
    Ok(log)
}
