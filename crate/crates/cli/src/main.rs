//! `calfrocket`: ingest, split, train, evaluate and report calf behaviour experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use calfrocket::pipeline::{self, ExperimentConfig, Overrides, TrainedClassifier};
use calfrocket::synth::{generate_segments, write_csv, SynthConfig};
use calfrocket::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "calfrocket", version, about = "Calf behaviour classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the raw CSV, window it and write the dataset archive and summary.
    Ingest(Common),
    /// Choose test calves and validation folds; write the split manifest.
    Split(Common),
    /// Fit transform and classifier on the training calves.
    Train(Common),
    /// Predict the test calves and write the metric reports.
    Evaluate(Common),
    /// Rebuild the metric reports from stored predictions and print them.
    Report(Common),
    /// Write a seeded synthetic recording in the ingestion CSV layout.
    Synth {
        /// Destination CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        calves: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "CALFROCKET_WORKERS")]
    workers: Option<usize>,
    /// Seed for every stochastic stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Raw CSV for `ingest`, overriding `dataset.path`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(&Overrides {
            workers: self.workers,
            seed: self.seed,
            output: self.out.clone(),
        });
        if let Some(csv) = &self.csv {
            config.dataset.path = csv.clone();
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest(c) => {
            let summary = pipeline::cmd_ingest(&c.resolve()?)?;
            print!("{}", summary.text());
        }
        Command::Split(c) => {
            let plan = pipeline::cmd_split(&c.resolve()?)?;
            println!(
                "test calves ({}, deviation {:.6}): {}",
                plan.test_calves.len(),
                plan.test_deviation,
                plan.test_calves.join(" ")
            );
            for (i, f) in plan.folds.iter().enumerate() {
                println!("fold {i} (deviation {:.6}): {}", f.deviation, f.validation.join(" "));
            }
        }
        Command::Train(c) => {
            let outcome = pipeline::cmd_train(&c.resolve()?)?;
            match &outcome.artifact.classifier {
                TrainedClassifier::Ridge { hyperparameters: h, .. } => {
                    if let Some(g) = &outcome.grid {
                        println!(
                            "grid search over {} combinations, best mean score {:.6}",
                            g.rows.len(),
                            g.rows[g.best_index].mean_score
                        );
                    }
                    println!(
                        "ridge: alpha {}, class weight {:?}, fit intercept {}",
                        h.alpha, h.class_weight, h.fit_intercept
                    );
                }
                TrainedClassifier::Mlp { model } => {
                    if let Some(last) = model.history.last() {
                        println!("mlp: {} epochs, final training loss {:.6}", model.history.len(), last.train_loss);
                    }
                }
            }
        }
        Command::Evaluate(c) => print!("{}", pipeline::cmd_evaluate(&c.resolve()?)?.text()),
        Command::Report(c) => print!("{}", pipeline::cmd_report(&c.resolve()?)?.text()),
        Command::Synth { out, calves, seed } => {
            let segments = generate_segments(&SynthConfig {
                calves,
                seed,
                ..Default::default()
            })?;
            write_csv(&segments, std::fs::File::create(&out)?)?;
            println!("{} segments from {calves} calves written to {}", segments.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
