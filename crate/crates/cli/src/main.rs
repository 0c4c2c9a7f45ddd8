//! `advcap`: synthetic data, training phases, evaluation, decoding and
//! sweeps.
//!
//! Exit codes: 0 on success, 1 for invalid flags, configs or inputs, 2 for
//! failures while running (IO, non-finite parameters, every sweep cell
//! failing).

mod commands;
mod error;
mod model;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Candidates, EvalArgs, TrainTarget};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "advcap", version, about = "Adversarially trained image captioning at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run config: dataset paths, output directory and training settings.
    #[arg(long)]
    config: PathBuf,
    /// Continue from a checkpoint written by an earlier stage.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic caption dataset as JSONL.
    GenData {
        /// Grammar spec JSON; the built-in grammar when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the generator by maximum likelihood.
    PretrainGen(TrainArgs),
    /// Pretrain the discriminator (runs generator pretraining first unless resuming).
    PretrainDisc(TrainArgs),
    /// Run the adversarial phase (and any earlier phase not yet done).
    Advtrain(TrainArgs),
    /// Decode a dataset and score the captions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated metric names.
        #[arg(long, default_value = "BLEU1,BLEU2,BLEU3,BLEU4,ROUGE_L,CIDER,CIDER_D")]
        metrics: String,
        #[arg(long, default_value_t = 5, conflicts_with_all = ["greedy", "references"])]
        beam: usize,
        #[arg(long)]
        greedy: bool,
        /// Score each image's first reference instead of decoding.
        #[arg(long)]
        references: bool,
        /// Dataset for CIDEr document frequencies; defaults to --data.
        #[arg(long)]
        idf_from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the scored captions as JSONL.
        #[arg(long)]
        captions: Option<PathBuf>,
        /// Also write discriminator probabilities for candidate and reference captions.
        #[arg(long)]
        disc_probs: Option<PathBuf>,
    },
    /// Train and evaluate every cell of a sweep grid (parallelism capped by ADVCAP_THREADS).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Grid JSON; the default lambda, metric and step grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write captions for a dataset; several checkpoints decode as an ensemble.
    Decode {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Beam width; greedy decoding when omitted.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn positive_beam(beam: usize) -> Result<usize, CliError> {
    if beam == 0 {
        return Err(CliError::config("beam must be at least 1"));
    }
    Ok(beam)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { spec, n, seed, out } => commands::gen_data(spec.as_deref(), n, seed, &out),
        Command::PretrainGen(a) => commands::train(TrainTarget::PretrainGen, &a.config, a.resume.as_deref()),
        Command::PretrainDisc(a) => commands::train(TrainTarget::PretrainDisc, &a.config, a.resume.as_deref()),
        Command::Advtrain(a) => commands::train(TrainTarget::Adversarial, &a.config, a.resume.as_deref()),
        Command::Eval { checkpoint, data, metrics, beam, greedy, references, idf_from, out, captions, disc_probs } => {
            let candidates = if references {
                Candidates::FirstReference
            } else if greedy {
                Candidates::Greedy
            } else {
                Candidates::Beam(positive_beam(beam)?)
            };
            commands::eval(EvalArgs {
                checkpoint: &checkpoint,
                data: &data,
                metrics: commands::parse_metrics(&metrics)?,
                candidates,
                out: &out,
                idf_from: idf_from.as_deref(),
                captions_out: captions.as_deref(),
                disc_probs_out: disc_probs.as_deref(),
            })
        }
        Command::Sweep { config, grid, out } => commands::sweep(&config, grid.as_deref(), &out),
        Command::Decode { checkpoint, data, beam, out } => {
            let beam = beam.map(positive_beam).transpose()?;
            commands::decode(&checkpoint, &data, beam, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("advcap: {e}");
            e.exit_code()
        }
    }
}
