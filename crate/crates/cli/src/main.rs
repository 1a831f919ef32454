//! `mtdc` — scenario runner and stability analyzer for multi-terminal HVDC
//! grids. One TOML config file fully specifies a run; see the README for the
//! grammar and the `configs/` directory for the shipped four-bus setups.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mtdc_cli::config::RunConfig;
use mtdc_cli::pipeline::{self, Overrides};

#[derive(Parser)]
#[command(name = "mtdc", version, about = "Multi-terminal HVDC grid simulator and analyzer")]
struct Cli {
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra CSV subsampling stride.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Seed for randomized suites.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trajectory, metrics and stability artifacts.
    Run {
        config: PathBuf,
        /// Write the normalized config to this path and continue.
        #[arg(long)]
        dump_config: Option<PathBuf>,
    },
    /// Evaluate certificates and the closed-loop spectrum without simulating.
    Analyze {
        config: PathBuf,
        #[arg(long)]
        dump_config: Option<PathBuf>,
    },
    /// Run one scenario per value of a numeric config parameter, in parallel.
    Sweep {
        config: PathBuf,
        /// Dotted parameter path, e.g. controller.k_p or scenario.tau.
        #[arg(long)]
        param: String,
        /// Comma-separated numeric values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Randomized certificate-soundness and voltage-bound property suite.
    Soundness {
        /// Instances per controller family.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let overrides = Overrides {
        out_dir: cli.out,
        stride: cli.stride,
    };
    match cli.command {
        Command::Run { config, dump_config } => {
            let config = load(&config, dump_config.as_deref())?;
            pipeline::run(&config, &overrides)?;
        }
        Command::Analyze { config, dump_config } => {
            let config = load(&config, dump_config.as_deref())?;
            pipeline::analyze(&config, &overrides)?;
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let config = RunConfig::load(&config)?;
            pipeline::sweep(&config, &overrides, &param, &values)?;
        }
        Command::Soundness { count } => {
            pipeline::soundness(cli.seed, count)?;
        }
    }
    Ok(())
}

fn load(path: &std::path::Path, dump_to: Option<&std::path::Path>) -> Result<RunConfig> {
    let config = RunConfig::load(path)?;
    if let Some(target) = dump_to {
        std::fs::write(target, config.dump()?)
            .with_context(|| format!("cannot write normalized config to {}", target.display()))?;
    }
    Ok(config)
}
