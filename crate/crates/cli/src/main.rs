use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use blindtrain::worker::WorkerMode;
use blindtrain_cli::commands::{self, TrainArgs, WorkerSource};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blindtrain", version, about = "Train and run networks on untrusted workers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Behaviour {
    Honest,
    Tamper,
    Lazy,
}

#[derive(Subcommand)]
enum Command {
    /// Serve blinded products to a master.
    Worker {
        #[arg(long)]
        listen: String,
        #[arg(long, value_enum, default_value = "honest")]
        mode: Behaviour,
        /// Probability of misbehaving on each result.
        #[arg(long, default_value_t = 1.0)]
        prob: f64,
        /// Amount added to the tampered entry.
        #[arg(long, default_value_t = 1.0)]
        magnitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network as described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated worker addresses.
        #[arg(long, conflicts_with = "local_workers")]
        workers: Option<String>,
        /// Spawn this many workers on loopback sockets.
        #[arg(long)]
        local_workers: Option<usize>,
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Report destination; stdout if omitted.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Classify the samples of a CSV file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "local_workers")]
        workers: Option<String>,
        #[arg(long)]
        local_workers: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plaintext local training with the same config, as a reference.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Minimum verification rounds for failure tolerance t.
    MinK {
        #[arg(long)]
        t: f64,
        #[arg(long = "N")]
        n_workers: u64,
        #[arg(long = "L")]
        n_layers: u64,
        #[arg(long, requires_all = ["dataset_size", "batch_size"])]
        epochs: Option<u64>,
        #[arg(long, requires_all = ["epochs", "batch_size"])]
        dataset_size: Option<u64>,
        #[arg(long, requires_all = ["epochs", "dataset_size"])]
        batch_size: Option<u64>,
    },
    /// Detection rate of verification against a misbehaving worker.
    VerifyExperiment {
        /// Comma-separated round counts.
        #[arg(long, default_value = "1,2,5,10")]
        k: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, value_enum)]
        mode: Behaviour,
        #[arg(long, default_value_t = 1.0)]
        prob: f64,
        #[arg(long, default_value_t = 1.0)]
        magnitude: f64,
        /// Side length of the square operands.
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mutual-information privacy of the blinding schemes, as CSV.
    MiEval {
        #[arg(long, default_value = "4,16,64,255")]
        keyspace_sizes: String,
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn worker_mode(b: Behaviour, prob: f64, magnitude: f64) -> WorkerMode {
    match b {
        Behaviour::Honest => WorkerMode::Honest,
        Behaviour::Tamper => WorkerMode::Tamper {
            probability: prob,
            magnitude,
        },
        Behaviour::Lazy => WorkerMode::Lazy { probability: prob },
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Worker {
            listen,
            mode,
            prob,
            magnitude,
            seed,
        } => commands::run_worker(&listen, worker_mode(mode, prob, magnitude), seed),
        Command::Train {
            config,
            workers,
            local_workers,
            model_out,
            report_out,
        } => commands::train(TrainArgs {
            config,
            workers: WorkerSource::from_flags(workers.as_deref(), local_workers)?,
            force_local: false,
            model_out,
            report_out,
        })
        .map(drop),
        Command::Baseline {
            config,
            model_out,
            report_out,
        } => commands::train(TrainArgs {
            config,
            workers: None,
            force_local: true,
            model_out,
            report_out,
        })
        .map(drop),
        Command::Infer {
            model,
            input,
            workers,
            local_workers,
            t,
            seed,
        } => {
            let source = WorkerSource::from_flags(workers.as_deref(), local_workers)?;
            let report = commands::infer(&model, &input, source, t, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::MinK {
            t,
            n_workers,
            n_layers,
            epochs,
            dataset_size,
            batch_size,
        } => {
            let training = match (epochs, dataset_size, batch_size) {
                (Some(e), Some(d), Some(b)) => Some((e, d, b)),
                (None, None, None) => None,
                _ => bail!("--epochs, --dataset-size and --batch-size go together"),
            };
            println!("{}", commands::min_k(t, n_workers, n_layers, training)?);
            Ok(())
        }
        Command::VerifyExperiment {
            k,
            trials,
            mode,
            prob,
            magnitude,
            dim,
            seed,
        } => {
            let ks = commands::parse_list(&k)?;
            let rows = commands::verify_experiment(&ks, trials, worker_mode(mode, prob, magnitude), dim, seed)?;
            commands::write_csv(&rows, std::io::stdout())
        }
        Command::MiEval {
            keyspace_sizes,
            size,
            bins,
            seed,
            out,
        } => {
            let sizes = commands::parse_list(&keyspace_sizes)?;
            let rows = commands::mi_eval(&sizes, size, bins, seed)?;
            match out {
                Some(path) => commands::write_csv(&rows, std::fs::File::create(&path)?),
                None => commands::write_csv(&rows, std::io::stdout()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
