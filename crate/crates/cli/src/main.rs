use std::path::PathBuf;

use alphamine_cli::commands::{self, MineOptions};
use alphamine_cli::config::{RunConfig, Split};
use anyhow::Result;
use clap::{Parser, Subcommand};

/// Formulaic alpha mining: synthetic data, policy-gradient search over
/// formulas, evaluation and top-k/drop-n backtests.
///
/// Settings come from defaults, then the JSON config, then flags; later
/// sources win. Log verbosity follows RUST_LOG (default `info`).
#[derive(Debug, Parser)]
#[command(name = "alphamine", version)]
struct Cli {
    /// JSON run config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic panel (with target) and the planted-alpha manifest.
    Synth,
    /// Train the agent and write the pool, checkpoint and logs.
    Mine {
        #[arg(long)]
        max_env_steps: Option<u64>,
        /// Continue from an agent checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// IC and rank IC of the combined pool alpha on one split.
    Eval {
        /// Pool file; defaults to `<out>/pool.json`.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Top-k/drop-n backtest of the combined pool alpha.
    Backtest {
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        cost_bps: Option<f64>,
    },
    /// Metrics on all splits, test backtest and CSV plot series.
    Report {
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Print the token vocabulary as JSON.
    Vocab,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }

    match cli.command {
        Command::Synth => {
            cfg.validate()?;
            for p in commands::synth(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Mine { max_env_steps, resume } => {
            if let Some(steps) = max_env_steps {
                cfg.ppo.max_env_steps = steps;
            }
            cfg.validate()?;
            let summary = commands::mine(&cfg, &MineOptions { resume })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { pool, split } => {
            cfg.validate()?;
            let path = commands::pool_path(&cfg, pool.as_deref());
            let record = commands::eval(&cfg, &path, split)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
        Command::Backtest {
            pool,
            split,
            k,
            n,
            cost_bps,
        } => {
            if let Some(k) = k {
                cfg.backtest.k = k;
            }
            if let Some(n) = n {
                cfg.backtest.n = n;
            }
            if let Some(c) = cost_bps {
                cfg.backtest.cost_bps = c;
            }
            cfg.validate()?;
            let path = commands::pool_path(&cfg, pool.as_deref());
            let summary = commands::backtest(&cfg, &path, split)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Report { pool } => {
            cfg.validate()?;
            let path = commands::pool_path(&cfg, pool.as_deref());
            let report = commands::report(&cfg, &path)?;
            println!("{}", serde_json::to_string_pretty(&report.eval)?);
        }
        Command::Vocab => {
            println!("{}", serde_json::to_string_pretty(&commands::vocab())?);
        }
    }
    Ok(())
}
