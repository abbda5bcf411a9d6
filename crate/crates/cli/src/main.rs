//! `ranklearn` — batch experiment runner for learning from ranking feedback.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ranklearn::estimation::{estimation_error_bound, EstimationBoundInputs};
use ranklearn_cli::config::load_config;
use ranklearn_cli::experiment::run_experiment;
use ranklearn_cli::ingest::{ingest_scores, write_ingest_outputs};
use ranklearn_cli::plotdata::emit_plot_data;

#[derive(Parser)]
#[command(
    name = "ranklearn",
    about = "Online learning from ranking feedback: experiments, ingestion, plots",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (grid point, seed) pair of a config file.
    Run {
        /// Path to a `key = value` experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output` key).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker thread count (overrides the config's `workers` key).
        #[arg(long)]
        workers: Option<usize>,
        /// Seed list (overrides the config's `seeds` key).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Rescale a raw model-score CSV into a utility sequence.
    Ingest {
        /// Score CSV with header `step,<model>,<model>,...`.
        #[arg(long)]
        input: PathBuf,
        /// Directory for `sequence.csv` and `metadata.csv`.
        #[arg(long)]
        output: PathBuf,
    },
    /// Aggregate trace files into a mean-regret curve with confidence bands.
    Plotdata {
        /// Output CSV (`t,mean_avg_regret,ci_halfwidth`).
        #[arg(long)]
        output: PathBuf,
        /// Trace files over a shared horizon.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Print the high-probability estimation error bound for one window.
    Bound {
        /// Ranking temperature.
        #[arg(long)]
        tau: f64,
        /// Per-step probability floor that each action is proposed.
        #[arg(long)]
        p: f64,
        /// Effective window length.
        #[arg(long)]
        window: usize,
        /// Failure probability.
        #[arg(long, default_value_t = ranklearn::learners::DEFAULT_DELTA)]
        delta: f64,
        /// Max-norm utility variation across the window.
        #[arg(long, default_value_t = 0.0)]
        variation: f64,
        /// Action count.
        #[arg(long)]
        actions: usize,
    },
}

/// Output directory precedence: `--output` flag, then the config's `output`
/// key, then `$RANKLEARN_OUTPUT_ROOT/<scenario>`, then `./runs/<scenario>`.
fn resolve_output(flag: Option<PathBuf>, from_config: Option<PathBuf>, scenario: &str) -> PathBuf {
    flag.or(from_config).unwrap_or_else(|| {
        std::env::var_os("RANKLEARN_OUTPUT_ROOT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(scenario)
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            output,
            workers,
            seeds,
        } => {
            let mut experiment = load_config(&config)?;
            if let Some(workers) = workers {
                experiment.workers = Some(workers);
            }
            if let Some(seeds) = seeds {
                experiment.seeds = seeds;
            }
            let out_dir = resolve_output(
                output,
                experiment.output.clone(),
                experiment.scenario.name(),
            );
            let outcome = run_experiment(&experiment, &out_dir)?;
            let runs = outcome.online.len() + outcome.games.len();
            println!(
                "{} runs -> {} (best grid {}, mean avg regret {:.6})",
                runs,
                outcome.output_dir.display(),
                outcome.best_grid,
                outcome.best_score
            );
        }
        Command::Ingest { input, output } => {
            let dataset = ingest_scores(&input)?;
            write_ingest_outputs(&dataset, &output)?;
            println!(
                "{} steps, {} models + reference -> {} (scale {:.6e}, offset {:.6e})",
                dataset.sequence.len(),
                dataset.model_names.len(),
                output.display(),
                dataset.scale,
                dataset.offset
            );
        }
        Command::Plotdata { output, traces } => {
            emit_plot_data(&traces, &output)?;
            println!("{} traces -> {}", traces.len(), output.display());
        }
        Command::Bound {
            tau,
            p,
            window,
            delta,
            variation,
            actions,
        } => {
            let bound = estimation_error_bound(&EstimationBoundInputs {
                tau,
                p,
                window_len: window,
                delta,
                window_variation: variation,
                action_count: actions,
            })
            .context("computing the estimation bound")?;
            println!(
                "bound {:.6e} ({})",
                bound.value,
                if bound.applicable {
                    "binding"
                } else {
                    "vacuous at this window"
                }
            );
        }
    }
    Ok(())
}
