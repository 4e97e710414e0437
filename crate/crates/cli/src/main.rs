use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hoverlab::harness::{
    compare_runs, run_evaluation, run_training, schedule_preview, EvalOverrides, ExperimentConfig, RunOptions,
};

#[derive(Parser)]
#[command(name = "hoverlab", version, about = "Quadrotor hover PPO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent; resumes if the run directory already holds a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Sequential rollout collection for bitwise-reproducible runs.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Evaluate a checkpoint's mean policy and write eval.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Constant wind speed (m/s).
        #[arg(long)]
        wind: Option<f64>,
        /// Half-width of the initial-position cube (m).
        #[arg(long)]
        init_range: Option<f64>,
    },
    /// Aggregate runs by variant and report dormant-ratio gaps.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// Merged per-step CSV.
        #[arg(long, default_value = "comparison.csv")]
        out: PathBuf,
    },
    /// Print the wind, learning-rate and checkpoint timeline of a config.
    SchedulePreview {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            deterministic,
            quiet,
        } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let opts = RunOptions {
                seed,
                deterministic,
                verbose: !quiet,
            };
            let summary = run_training(&cfg, &opts)?;
            if let Some(step) = summary.resumed_from {
                println!("resumed at step {step}");
            }
            println!(
                "{} iterations, {} steps -> {}",
                summary.iterations,
                summary.global_step,
                summary.run_dir.display()
            );
            if let Some(ck) = summary.final_checkpoint {
                println!("checkpoint {}", ck.display());
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            wind,
            init_range,
        } => {
            let overrides = EvalOverrides {
                episodes,
                wind_speed: wind,
                init_range,
            };
            let (summary, path) = run_evaluation(&checkpoint, &overrides)?;
            println!(
                "success {:.0}% (radius {} m over final {} s), mse x/y/z = {:.4}/{:.4}/{:.4} m^2 at {} m/s wind",
                summary.success_rate,
                summary.success_radius,
                summary.window_seconds,
                summary.mse_x,
                summary.mse_y,
                summary.mse_z,
                summary.wind_speed
            );
            println!("wrote {}", path.display());
        }
        Command::Compare { dirs, out } => {
            let report = compare_runs(&dirs)?;
            print!("{report}");
            report.write_merged_csv(&out)?;
            println!("wrote {}", out.display());
        }
        Command::SchedulePreview { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            print!("{}", schedule_preview(&cfg));
        }
    }
    Ok(())
}
