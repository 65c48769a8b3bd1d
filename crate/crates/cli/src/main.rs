use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use stackfuse::runner::{self, ExperimentConfig, ReportBundle};

#[derive(Parser)]
#[command(name = "stackfuse", version, about = "Stacking-ensemble text classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print its normalized form and hash.
    Validate(Common),
    /// Load, preprocess and split the data; fit TF-IDF and the tokenizer.
    Prep(Common),
    /// Fit the classical baselines.
    Train(Common),
    /// Train the transformer bases and the meta classifier.
    Stack(Common),
    /// Score every trained model on the test split.
    Evaluate(Common),
    /// Write tables and loss curves from the last evaluation.
    Report(Common),
    /// All stages end to end.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides run.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides run.seeds).
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Dataset CSV (overrides dataset.path).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = runner::read_config(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seeds) = &self.seed {
            cfg.seeds = seeds.clone();
        }
        if let Some(d) = &self.dataset {
            cfg.dataset.path = d.clone();
            if cfg.dataset.name.is_empty() {
                cfg.dataset.name = d.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            }
        }
        runner::check_files(&cfg)?;
        Ok(cfg)
    }
}

fn report(cfg: &ExperimentConfig, b: &ReportBundle) -> Result<bool> {
    for f in runner::emit_report(b, &cfg.output_dir)? {
        println!("wrote {}", f.display());
    }
    for m in b.baselines.iter().chain(&b.transformers) {
        if let Some(e) = &m.error {
            eprintln!("error: {}: {e}", m.name);
        }
    }
    Ok(b.complete())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate(c) => {
            let cfg = c.load()?;
            print!("{}", cfg.normalized());
            println!("# hash {}", cfg.hash());
        }
        Command::Prep(c) => runner::prep_stage(&c.load()?)?,
        Command::Train(c) => runner::train_stage(&c.load()?)?,
        Command::Stack(c) => runner::stack_stage(&c.load()?)?,
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let b = runner::evaluate_stage(&cfg)?;
            for m in b.baselines.iter().chain(&b.transformers) {
                match m.mean() {
                    Some(s) => println!("{:<12} accuracy {:.4}  f1 {:.4}  loss {:.4}", m.name, s.accuracy, s.f1, s.loss),
                    None => println!("{:<12} failed", m.name),
                }
            }
            return Ok(b.complete());
        }
        Command::Report(c) => {
            let cfg = c.load()?;
            return report(&cfg, &runner::load_bundle(&cfg)?);
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let b = runner::run_experiment(&cfg)?;
            return report(&cfg, &b);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
