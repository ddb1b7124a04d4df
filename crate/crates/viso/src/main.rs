use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use viso::commands::{cmd_field, cmd_run, cmd_suite};

#[derive(Parser)]
#[command(name = "viso", version, about = "Target-guided view planning and grasp fusion on simulated tabletop scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write trajectory, grasps, events and metrics.
    Run {
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "VISO_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every scene in a directory under several seeds.
    Suite {
        dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// First seed; the suite uses `seed .. seed + seeds`.
        #[arg(long, env = "VISO_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sample the view field on an n x n hemisphere grid.
    Field {
        scene: PathBuf,
        #[arg(long, default_value_t = 24)]
        grid: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scene, config, seed, out } => cmd_run(&scene, config.as_deref(), seed, &out),
        Command::Suite {
            dir,
            config,
            seeds,
            seed,
            out,
        } => cmd_suite(&dir, config.as_deref(), seeds, seed, &out).map(|s| {
            let m = &s.metrics;
            println!(
                "episodes {} afsr {:.4} aga {} agsr {}",
                s.episodes.len(),
                m.afsr,
                m.aga.map_or("-".into(), |v| format!("{v:.4}")),
                m.agsr.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }),
        Command::Field { scene, grid, out } => cmd_field(&scene, grid, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("viso: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
