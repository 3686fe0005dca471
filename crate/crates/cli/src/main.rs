use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dicg_cli::commands::{self, AttentionArgs, EvalArgs, PredictionArgs, TrainArgs};
use dicg_cli::{CliError, RunConfig};
use dicg_core::model::Algo;
use dicg_core::worlds::WorldConfig;

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "dicg",
    version,
    about = "Train, evaluate and probe implicit coordination graph policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config; writes metrics.csv, eval.csv, checkpoints and curve.svg.
    Train {
        config: PathBuf,
        #[arg(long, env = "DICG_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "DICG_OUT")]
        out: Option<PathBuf>,
        /// Threads for rollout collection; results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
        /// Replace logs already present in the output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, env = "DICG_SEED", default_value_t = 0)]
        seed: u64,
        /// Take the most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
        /// CSV to append to (default: evaluations.csv beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean attention weight per grid distance between agents.
    ProbeAttention {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, env = "DICG_SEED", default_value_t = 0)]
        seed: u64,
        /// Roll out the most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict a teammate's action from embeddings before and after the graph.
    ProbePrediction {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        pairs: usize,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, env = "DICG_SEED", default_value_t = 0)]
        seed: u64,
        /// Label with the most likely action instead of a sampled one.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learning curves from metrics CSVs, given as PATH or LABEL=PATH.
    Plot {
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "iteration")]
        x: String,
        #[arg(long, default_value = "mean_return")]
        y: String,
    },
    /// Print the reference config for a world and algorithm.
    #[command(hide = true)]
    Template {
        #[arg(long)]
        world: String,
        #[arg(long)]
        algo: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            workers,
            iterations,
            overwrite,
        } => {
            let files = commands::train(&TrainArgs {
                config,
                seed,
                out,
                workers,
                iterations,
                overwrite,
            })?;
            println!("wrote {}", files.dir.display());
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
            seed,
            greedy,
            out,
        } => {
            let (m, path) = commands::eval(&EvalArgs {
                checkpoint,
                config,
                episodes,
                seed,
                greedy,
                out,
            })?;
            println!(
                "episodes {}  mean_return {:.4}  success_rate {:.4}  mean_length {:.2}",
                m.episodes, m.mean_return, m.success_rate, m.mean_length
            );
            println!("appended to {}", path.display());
        }
        Command::ProbeAttention {
            checkpoint,
            config,
            episodes,
            seed,
            greedy,
            out,
        } => {
            let r = commands::probe_attention(&AttentionArgs {
                checkpoint,
                config,
                episodes,
                seed,
                greedy,
                out,
            })?;
            println!("distance  count  mean_attention  stderr");
            for b in &r.buckets {
                println!("{:>8}  {:>5}  {:>14.4}  {:.4}", b.distance, b.count, b.mean, b.stderr);
            }
            println!(
                "attention mass at distance >= {}: {:.4}",
                commands::FAR_DISTANCE,
                r.far_mass
            );
            println!("wrote {}", r.out.display());
        }
        Command::ProbePrediction {
            checkpoint,
            config,
            pairs,
            epochs,
            episodes,
            seed,
            greedy,
            out,
        } => {
            let (rows, path) = commands::probe_prediction(&PredictionArgs {
                checkpoint,
                config,
                pairs,
                epochs,
                episodes,
                seed,
                greedy,
                out,
            })?;
            println!("pair  i  j  samples  pre_acc  post_acc");
            for r in &rows {
                println!(
                    "{:>4}  {}  {}  {:>7}  {:.4}   {:.4}",
                    r.pair, r.i, r.j, r.samples, r.pre_accuracy, r.post_accuracy
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Plot { inputs, out, x, y } => {
            let inputs: Vec<_> = inputs.iter().map(|s| commands::parse_input(s)).collect();
            for w in commands::plot_files(&inputs, &out, &x, &y)? {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", out.display());
        }
        Command::Template { world, algo } => {
            let world: WorldConfig = toml::from_str(&format!("name = {world:?}"))
                .map_err(|e| CliError::Config(format!("world `{world}`: {e}")))?;
            let algo: Algo = toml::Value::String(algo.clone())
                .try_into()
                .map_err(|e| CliError::Config(format!("algo `{algo}`: {e}")))?;
            print!("{}", RunConfig::defaults(world, algo).to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
