use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hinsr_core::config::{ConfigLayer, RunConfig};
use hinsr_core::run::{self, SplitName};
use hinsr_core::synthetic::{default_cues, generate, to_jsonl, SyntheticSpec};
use hinsr_core::Error;

#[derive(Parser)]
#[command(name = "hinsr", version, about = "Summary-aware document sentiment classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, checkpoints and a manifest.
    Train(RunArgs),
    /// Score a checkpoint on a corpus split.
    Eval(CheckpointArgs),
    /// Train and test every ablation mode under one seed.
    Ablate(RunArgs),
    /// Train with 0..=N rethinking episodes and report test scores.
    SweepEpisodes {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 4)]
        max_episodes: usize,
    },
    /// Accuracy by document-length bucket.
    LengthReport(CheckpointArgs),
    /// Candidate and token attention weights as JSON lines.
    ExportAttention {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        /// Only the first N samples of the split.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write a synthetic subject-keyed corpus.
    GenSynthetic(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key-value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of classes; inferred from the largest label if omitted.
    #[arg(long)]
    classes: Option<usize>,
    /// review[:VAL:TEST], review-ratio:R or random[:TRAIN:VAL:TEST].
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "out")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    max_candidate_tokens: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff: Option<usize>,
    #[arg(long)]
    gru_hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// from-scratch or pretrained.
    #[arg(long)]
    lr_preset: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// full, no_doc, no_doc_seg, no_interact or no_summary.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            corpus: self.corpus.clone(),
            classes: self.classes,
            split: self.split.clone(),
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            candidates: self.candidates,
            seq_len: self.seq_len,
            max_candidate_tokens: self.max_candidate_tokens,
            min_count: self.min_count,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ff: self.ff,
            gru_hidden: self.gru_hidden,
            dropout: self.dropout,
            lambda: self.lambda,
            episodes: self.episodes,
            epochs: self.epochs,
            lr: self.lr,
            lr_preset: self.lr_preset.clone(),
            batch_size: self.batch_size,
            mode: self.mode.clone(),
            threads: self.threads,
            eval_train: None,
        }
    }

    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(ConfigLayer::from_file(path)?);
        }
        layers.push(self.layer());
        let config = RunConfig::resolve(&layers).map_err(|e| match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Run(other),
        })?;
        if config.corpus.is_none() {
            return Err(Failure::Usage("no corpus: pass --corpus or set corpus in the config file".into()));
        }
        Ok(config)
    }
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CheckpointArgs {
    fn split(&self) -> Result<SplitName, Failure> {
        self.split.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    sentences: usize,
    #[arg(long, default_value_t = 1.0)]
    distractor_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let s = run::train_run(&config)?;
            let (episode, epoch) = s.outcome.best_at;
            println!(
                "best checkpoint: episode {episode}, epoch {epoch}; test accuracy {:.4}, macro-F1 {:.4}",
                s.test.accuracy, s.test.macro_f1
            );
            println!("outputs in {}", s.out_dir.display());
        }
        Command::Eval(args) => {
            let report = run::eval_run(&args.checkpoint, &args.corpus, args.split()?, args.threads)?;
            let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            emit(args.out.as_deref(), &(json + "\n"))?;
        }
        Command::Ablate(args) => {
            let config = args.resolve()?;
            let rows = run::ablate_run(&config)?;
            print!("{}", hinsr_core::harness::ablation_csv(&rows));
        }
        Command::SweepEpisodes { run: args, max_episodes } => {
            let config = args.resolve()?;
            let rows = run::sweep_run(&config, max_episodes)?;
            print!("{}", hinsr_core::harness::sweep_csv(&rows));
        }
        Command::LengthReport(args) => {
            let report = run::length_report_run(&args.checkpoint, &args.corpus, args.split()?, args.threads)?;
            emit(args.out.as_deref(), &report.to_csv())?;
        }
        Command::ExportAttention { ckpt, limit } => {
            let records = run::export_attention_run(&ckpt.checkpoint, &ckpt.corpus, ckpt.split()?, limit)?;
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).map_err(Error::from)?);
                text.push('\n');
            }
            emit(ckpt.out.as_deref(), &text)?;
        }
        Command::GenSynthetic(a) => {
            let spec = SyntheticSpec {
                samples: a.samples,
                classes: a.classes,
                cues: default_cues(a.classes),
                sentences: a.sentences,
                distractor_rate: a.distractor_rate,
                noise_rate: a.noise_rate,
                ..SyntheticSpec::new(a.samples, a.classes)
            };
            let records = generate(&spec, a.seed)?;
            fs::write(&a.out, to_jsonl(&records))?;
            println!("wrote {} records to {}", records.len(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
