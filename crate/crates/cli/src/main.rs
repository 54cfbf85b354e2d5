use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use hjb_ksos::{run_experiment, write_outputs, ExperimentConfig, Method, RunOptions};

#[derive(Parser)]
#[command(version, about = "HJB subsolution experiments: LP, guided SoS and kernel SoS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write results.csv, results_raw.csv and value dumps.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated subset of lp,guided,kernel.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Suppress per-solve progress lines.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { config, out_dir, workers, methods, quiet } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions { workers, methods, progress: !quiet };
            let result = run_experiment(&cfg, &opts).context("running the experiment")?;
            let paths = write_outputs(&cfg, &result, &out_dir)?;
            for o in &result.best {
                let r = &o.row;
                println!(
                    "{:<10} n_x={:<3} value_error={:<12} policy_cost={:<12} {}",
                    r.method,
                    r.n_x,
                    r.value_error.map_or("-".into(), |v| format!("{v:.4e}")),
                    r.policy_cost.map_or("-".into(), |v| format!("{v:.5}")),
                    r.status
                );
            }
            println!("wrote {}", paths.results.display());
        }
    }
    Ok(())
}
