use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use advcap_core::advtrain::{
    evaluate_generator, run_sweep, write_sweep_csv, DecodeMode, Event, Phase, StopAt, SweepGrid, TrainError, Trainer,
};
use advcap_core::checkpoint::{Checkpoint, CheckpointError};
use advcap_core::generator::{beam_search, ensemble_decode, greedy_batch, Generator};
use advcap_core::metrics::{build_idf, corpus_score, MetricId};
use advcap_core::textdata::{
    caption_corpus, encode_examples, gen_synthetic_dataset, load_jsonl_dataset, write_jsonl_dataset, Caption, Example,
    GrammarSpec, Vocabulary,
};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::model::{load_model, vocab_extra, vocab_of, Model};
use crate::run_config::{first_difference, RunConfig};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.advc";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e}", path.display()))
}

fn write_lines(path: &Path, lines: &[Value]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for line in lines {
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn gen_data(spec: Option<&Path>, n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let spec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<GrammarSpec>(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => GrammarSpec::default(),
    };
    let data = gen_synthetic_dataset(&spec, n, seed)?;
    write_jsonl_dataset(out, &data).map_err(|e| CliError::runtime(e.to_string()))?;
    log::info!("wrote {n} examples to {}", out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTarget {
    PretrainGen,
    PretrainDisc,
    Adversarial,
}

impl TrainTarget {
    fn stop(self) -> StopAt {
        match self {
            TrainTarget::PretrainGen => StopAt::PretrainGen,
            TrainTarget::PretrainDisc => StopAt::PretrainDisc,
            TrainTarget::Adversarial => StopAt::End,
        }
    }

    /// Phase the trainer is in once the target has been reached.
    fn reached(self) -> Phase {
        match self {
            TrainTarget::PretrainGen => Phase::PretrainDisc,
            TrainTarget::PretrainDisc => Phase::Adversarial,
            TrainTarget::Adversarial => Phase::Done,
        }
    }

    pub fn checkpoint_name(self) -> &'static str {
        match self {
            TrainTarget::PretrainGen => "pretrain_gen.advc",
            TrainTarget::PretrainDisc => "pretrain_disc.advc",
            TrainTarget::Adversarial => "final.advc",
        }
    }
}

fn load_split(path: &Path, vocab: &Vocabulary, t_max: usize) -> Result<Vec<Example>, CliError> {
    let raw = load_jsonl_dataset(path)?;
    Ok(encode_examples(&raw, vocab, t_max)?)
}

/// Keeps the first `n` lines of the training log so a resumed run appends
/// exactly where the checkpoint was taken.
fn truncate_log(path: &Path, n: usize) -> Result<(), CliError> {
    let lines: Vec<String> = match File::open(path) {
        Ok(f) => BufReader::new(f).lines().take(n).collect::<Result<_, _>>().map_err(io_err(path))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(path)(e)),
    };
    if lines.len() < n {
        log::warn!("{} holds {} records, the checkpoint expects {n}", path.display(), lines.len());
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for l in &lines {
        writeln!(w, "{l}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn train(target: TrainTarget, config: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let rc = RunConfig::load(config)?;
    let t_max = rc.train_config.t_max;
    let log_path = rc.out_dir.join(LOG_FILE);
    fs::create_dir_all(&rc.out_dir).map_err(io_err(&rc.out_dir))?;
    let (vocab, mut trainer, mut records) = match resume {
        None => {
            let raw = load_jsonl_dataset(&rc.train)?;
            let vocab = Vocabulary::build(&caption_corpus(&raw), rc.train_config.min_count)?;
            let train = encode_examples(&raw, &vocab, t_max)?;
            let val = load_split(&rc.val, &vocab, t_max)?;
            log::info!("vocabulary of {} tokens from {} training images", vocab.len(), train.len());
            let trainer = Trainer::new(rc.train_config.clone(), vocab.len(), train, val)?;
            File::create(&log_path).map_err(io_err(&log_path))?;
            (vocab, trainer, 0u64)
        }
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let vocab = vocab_of(&ck)?;
            let saved: advcap_core::advtrain::TrainConfig = ck
                .metadata
                .get("config")
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(|| CliError::config(format!("{}: checkpoint has no training config", path.display())))?;
            if let Some(key) = first_difference(&saved, &rc.train_config) {
                return Err(CliError::config(format!("{key} differs between the config and the checkpoint")));
            }
            let records = ck.metadata.pointer("/extra/log_records").and_then(Value::as_u64).unwrap_or(0);
            let train = load_split(&rc.train, &vocab, t_max)?;
            let val = load_split(&rc.val, &vocab, t_max)?;
            let trainer = Trainer::from_checkpoint(&ck, train, val)?;
            truncate_log(&log_path, records as usize)?;
            (vocab, trainer, records)
        }
    };
    if trainer.phase() >= target.reached() {
        log::info!("checkpoint is already past this stage ({:?}); nothing to do", trainer.phase());
        return Ok(());
    }
    let mut log = BufWriter::new(
        fs::OpenOptions::new().append(true).create(true).open(&log_path).map_err(io_err(&log_path))?,
    );
    let latest = rc.out_dir.join(LATEST_CHECKPOINT);
    let log_io = |source: std::io::Error| -> TrainError {
        CheckpointError::Io { path: log_path.display().to_string(), source }.into()
    };
    let mut hook = |ev: Event<'_>| -> Result<(), TrainError> {
        match ev {
            Event::Log(rec) => {
                let line = serde_json::to_string(rec).expect("log record serializes");
                writeln!(log, "{line}").map_err(log_io)?;
                records += 1;
            }
            Event::Checkpoint(t) => {
                log.flush().map_err(log_io)?;
                let mut extra = vocab_extra(&vocab);
                extra["log_records"] = json!(records);
                t.to_checkpoint(extra).save(&latest)?;
            }
        }
        Ok(())
    };
    let outcome = trainer.run(target.stop(), &mut hook);
    drop(hook);
    log.flush().map_err(io_err(&log_path))?;
    outcome?;
    let mut extra = vocab_extra(&vocab);
    extra["log_records"] = json!(records);
    let out = rc.out_dir.join(target.checkpoint_name());
    trainer.to_checkpoint(extra).save(&out).map_err(|e| CliError::runtime(e.to_string()))?;
    log::info!("wrote {}", out.display());
    Ok(())
}

/// How evaluation captions are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Candidates {
    Beam(usize),
    Greedy,
    /// The first reference of each image, for checking the metrics.
    FirstReference,
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub metrics: Vec<MetricId>,
    pub candidates: Candidates,
    pub out: &'a Path,
    pub idf_from: Option<&'a Path>,
    pub captions_out: Option<&'a Path>,
    pub disc_probs_out: Option<&'a Path>,
}

pub fn parse_metrics(list: &str) -> Result<Vec<MetricId>, CliError> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: MetricId = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::config("no metrics requested"));
    }
    Ok(out)
}

fn caption_record(vocab: &Vocabulary, image_id: u64, caption: &Caption) -> Value {
    json!({ "image_id": image_id, "caption": vocab.decode(&caption.ids) })
}

pub fn eval(args: EvalArgs<'_>) -> Result<(), CliError> {
    let Model { vocab, gen, disc } = load_model(args.checkpoint)?;
    let data = load_split(args.data, &vocab, gen.t_max())?;
    if data.is_empty() {
        return Err(CliError::config(format!("{}: no examples", args.data.display())));
    }
    let idf = match args.idf_from {
        Some(p) => build_idf(&load_split(p, &vocab, gen.t_max())?),
        None => build_idf(&data),
    };
    let (caps, scores) = match args.candidates {
        Candidates::FirstReference => {
            let caps: Vec<Caption> = data.iter().map(|e| e.references[0].clone()).collect();
            let refs: Vec<Vec<Caption>> = data.iter().map(|e| e.references.clone()).collect();
            let scores = args
                .metrics
                .iter()
                .map(|&m| Ok((m, corpus_score(m, &caps, &refs, &idf)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            (caps, scores)
        }
        mode => {
            let mode = if let Candidates::Beam(k) = mode { DecodeMode::Beam(k) } else { DecodeMode::Greedy };
            let (caps, scores) = evaluate_generator(&gen, &data, &args.metrics, mode, &idf)?;
            (caps, args.metrics.iter().map(|m| (*m, scores[m])).collect())
        }
    };
    let split = args.data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report: Vec<Value> = scores
        .iter()
        .map(|(m, v)| json!({ "split": split, "metric": m.name(), "level": "corpus", "value": v }))
        .collect();
    write_lines(args.out, &report)?;
    for (m, v) in &scores {
        log::info!("{split} {m}: {v}");
    }
    if let Some(path) = args.captions_out {
        let lines: Vec<Value> = data.iter().zip(&caps).map(|(e, c)| caption_record(&vocab, e.image_id, c)).collect();
        write_lines(path, &lines)?;
    }
    if let Some(path) = args.disc_probs_out {
        let mut feats: Vec<&[f64]> = Vec::new();
        let mut scored: Vec<(u64, &str, Caption)> = Vec::new();
        for (e, c) in data.iter().zip(&caps) {
            feats.push(&e.feature);
            scored.push((e.image_id, "candidate", c.clone()));
            for r in &e.references {
                feats.push(&e.feature);
                scored.push((e.image_id, "reference", r.clone()));
            }
        }
        let captions: Vec<Caption> = scored.iter().map(|(_, _, c)| c.clone()).collect();
        let probs = disc.score_captions(&feats, &captions).map_err(|e| CliError::runtime(e.to_string()))?;
        let lines: Vec<Value> = scored
            .iter()
            .zip(probs)
            .map(|((id, source, c), p)| {
                json!({ "image_id": id, "source": source, "caption": vocab.decode(&c.ids), "p": p })
            })
            .collect();
        write_lines(path, &lines)?;
    }
    Ok(())
}

pub fn decode(checkpoints: &[PathBuf], data: &Path, beam: Option<usize>, out: &Path) -> Result<(), CliError> {
    let models: Vec<Model> = checkpoints.iter().map(|p| load_model(p)).collect::<Result<_, _>>()?;
    let vocab = &models[0].vocab;
    if models.iter().any(|m| m.vocab != *vocab) {
        return Err(CliError::config("ensemble members were trained with different vocabularies"));
    }
    let gens: Vec<&Generator> = models.iter().map(|m| &m.gen).collect();
    let examples = load_split(data, vocab, gens[0].t_max())?;
    let decoded = match (beam, gens.len()) {
        (None, 1) => {
            let feats: Vec<&[f64]> = examples.iter().map(|e| e.feature.as_slice()).collect();
            greedy_batch(gens[0], &feats).map_err(|e| CliError::runtime(e.to_string()))?
        }
        (None, _) => return Err(CliError::config("ensembles decode with beam search; pass --beam")),
        (Some(k), 1) => examples
            .iter()
            .map(|e| beam_search(gens[0], &e.feature, k))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::runtime(e.to_string()))?,
        (Some(k), _) => examples
            .iter()
            .map(|e| ensemble_decode(&gens, &e.feature, k))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::config(e.to_string()))?,
    };
    let lines: Vec<Value> = examples
        .iter()
        .zip(&decoded)
        .map(|(e, d)| {
            let mut rec = caption_record(vocab, e.image_id, &d.caption);
            rec["log_prob"] = json!(d.log_prob);
            rec
        })
        .collect();
    write_lines(out, &lines)
}

pub fn sweep_threads() -> Result<usize, CliError> {
    match std::env::var("ADVCAP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::config(format!("ADVCAP_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Runs the grid; succeeds when at least one cell trained.
pub fn sweep(config: &Path, grid: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let rc = RunConfig::load(config)?;
    let grid = match grid {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SweepGrid>(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => SweepGrid::default(),
    };
    let threads = sweep_threads()?;
    let t_max = rc.train_config.t_max;
    let raw = load_jsonl_dataset(&rc.train)?;
    let vocab = Vocabulary::build(&caption_corpus(&raw), rc.train_config.min_count)?;
    let train = encode_examples(&raw, &vocab, t_max)?;
    let val = load_split(&rc.val, &vocab, t_max)?;
    let result = run_sweep(&train, &val, vocab.len(), &rc.train_config, &grid, threads)?;
    let file = File::create(out).map_err(io_err(out))?;
    write_sweep_csv(&result, file).map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
    let ok = result.succeeded();
    log::info!("{ok} of {} sweep cells succeeded; wrote {}", result.rows.len(), out.display());
    if ok == 0 {
        return Err(CliError::runtime("every sweep cell failed"));
    }
    Ok(())
}
