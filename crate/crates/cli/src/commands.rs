//! Subcommand bodies. Each takes the effective config and writes its
//! artifacts through a [`Stage`].

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use alphamine_agent::trainer::{write_json_lines, AgentCheckpoint, Trainer};
use alphamine_core::backtest::{run_topk_dropn, summarize, BacktestConfig, BacktestSummary};
use alphamine_core::dsl::Vocabulary;
use alphamine_core::env::AlphaEnv;
use alphamine_core::metrics::{mean_ic, mean_rank_ic, paired_days};
use alphamine_core::panel::PanelData;
use alphamine_core::pool::{AlphaPool, PoolCheckpoint};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{parse_planted, DataSource, RunConfig, Split};
use crate::output::Stage;

pub const CONFIG_FILE: &str = "config.json";
pub const PANEL_FILE: &str = "panel.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POOL_FILE: &str = "pool.json";
pub const AGENT_FILE: &str = "agent.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const EPISODE_LOG_FILE: &str = "episodes.jsonl";
pub const OBJECTIVE_FILE: &str = "objective.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n: usize,
    pub days: usize,
    pub noise_sigma: f64,
    pub planted: Vec<crate::config::PlantedAlpha>,
}

pub fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let DataSource::Synth(spec) = &cfg.data else {
        bail!("synth needs a synthetic data source in the config");
    };
    let planted = parse_planted(&spec.planted)?;
    let panel = cfg.load_panel()?;
    let mut stage = Stage::new(&cfg.out, "synth")?;
    let mut csv = Vec::new();
    panel.write_csv(&mut csv, true)?;
    stage.write(PANEL_FILE, &csv)?;
    let manifest = Manifest {
        seed: cfg.synth_seed(),
        n: spec.n,
        days: spec.days,
        noise_sigma: spec.noise_sigma,
        planted: planted
            .iter()
            .map(|(e, w)| crate::config::PlantedAlpha {
                expression: e.to_infix_string(),
                weight: *w,
            })
            .collect(),
    };
    stage.write_json(MANIFEST_FILE, &manifest)?;
    stage.write_json(CONFIG_FILE, cfg)?;
    stage.commit()
}

#[derive(Debug, Clone, Default)]
pub struct MineOptions {
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MineSummary {
    pub env_steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub pool_size: usize,
    pub train_objective: f64,
}

pub fn mine(cfg: &RunConfig, opts: &MineOptions) -> Result<MineSummary> {
    let panel = Arc::new(cfg.load_panel()?);
    let splits = cfg.split_ranges(&panel)?;
    let vocab = Vocabulary::default();
    let pool = AlphaPool::for_panel(&panel, splits.train, cfg.capacity, cfg.gd);
    let env = AlphaEnv::new(Arc::clone(&panel), splits.train, vocab.clone(), pool, cfg.env, cfg.seed);
    let ppo = cfg.ppo();
    let mut trainer = match &opts.resume {
        Some(path) => {
            let ckpt = AgentCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            log::info!("resuming at {} env steps", ckpt.env_steps);
            Trainer::resume(env, ckpt, ppo.max_env_steps)?
        }
        None => Trainer::new(env, cfg.net.for_vocab(vocab.len()), ppo)?,
    };

    let mut stage = Stage::new(&cfg.out, "mine")?;
    trainer.train()?;

    let pool = trainer.pool().to_checkpoint();
    stage.write_json(POOL_FILE, &pool)?;
    let agent_path = stage.path(AGENT_FILE);
    trainer.checkpoint().save(&agent_path)?;
    let mut buf = Vec::new();
    write_json_lines(trainer.update_log(), &mut buf)?;
    stage.write(TRAIN_LOG_FILE, &buf)?;
    buf.clear();
    write_json_lines(trainer.episode_log(), &mut buf)?;
    stage.write(EPISODE_LOG_FILE, &buf)?;
    let mut curve = String::from("env_steps,pool_objective\n");
    for r in trainer.update_log() {
        curve.push_str(&format!("{},{}\n", r.env_steps, r.pool_objective));
    }
    stage.write(OBJECTIVE_FILE, curve.as_bytes())?;
    stage.write_json(CONFIG_FILE, cfg)?;
    stage.commit()?;

    Ok(MineSummary {
        env_steps: trainer.env_steps(),
        episodes: trainer.episodes(),
        updates: trainer.updates(),
        pool_size: trainer.pool().len(),
        train_objective: trainer.pool().objective(),
    })
}

pub fn load_pool(path: &Path) -> Result<PoolCheckpoint> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading pool {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing pool {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub split: String,
    pub from: String,
    pub to: String,
    pub days: usize,
    pub ic: f64,
    pub rank_ic: f64,
    pub alphas: usize,
}

fn eval_on(panel: &PanelData, cfg: &RunConfig, pool: &PoolCheckpoint, split: Split) -> Result<EvalRecord> {
    let range = cfg.split_ranges(panel)?.get(split);
    let signal = pool.combined_signal(panel, range, cfg.env.min_valid_fraction)?;
    let n = panel.n_stocks();
    let target = &panel.target()[range.start * n..(range.end + 1) * n];
    let ic = mean_ic(paired_days(signal.values(), target, n))
        .map_err(|_| anyhow::anyhow!("combined alpha has no valid day on the {} split", split.name()))?;
    let rank_ic = mean_rank_ic(paired_days(signal.values(), target, n))
        .map_err(|_| anyhow::anyhow!("combined alpha has no valid day on the {} split", split.name()))?;
    Ok(EvalRecord {
        split: split.name().to_string(),
        from: panel.dates()[range.start].to_string(),
        to: panel.dates()[range.end].to_string(),
        days: range.len(),
        ic,
        rank_ic,
        alphas: pool.alphas.len(),
    })
}

pub fn pool_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join(POOL_FILE))
}

pub fn eval(cfg: &RunConfig, pool_file: &Path, split: Split) -> Result<EvalRecord> {
    let pool = load_pool(pool_file)?;
    let panel = cfg.load_panel()?;
    let record = eval_on(&panel, cfg, &pool, split)?;
    let mut stage = Stage::new(&cfg.out, "eval")?;
    stage.write_json(&format!("eval_{}.json", split.name()), &record)?;
    stage.write_json(CONFIG_FILE, cfg)?;
    stage.commit()?;
    Ok(record)
}

fn backtest_on(
    panel: &PanelData,
    cfg: &RunConfig,
    pool: &PoolCheckpoint,
    split: Split,
    bt: &BacktestConfig,
    stage: &mut Stage,
) -> Result<BacktestSummary> {
    let range = cfg.split_ranges(panel)?.get(split);
    let signal = pool.combined_signal(panel, range, cfg.env.min_valid_fraction)?;
    let report = run_topk_dropn(panel, &signal, bt)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    stage.write(&format!("backtest_{}.csv", split.name()), &csv)?;
    let summary = summarize(&report);
    stage.write_json(&format!("backtest_{}_summary.json", split.name()), &summary)?;
    let mut trades = Vec::new();
    for (d, t) in report.dates.iter().zip(&report.trades) {
        serde_json::to_writer(
            &mut trades,
            &serde_json::json!({"date": d.to_string(), "buys": t.buys, "sells": t.sells, "missing_signal": t.missing_signal}),
        )?;
        trades.write_all(b"\n")?;
    }
    stage.write(&format!("backtest_{}_trades.jsonl", split.name()), &trades)?;
    Ok(summary)
}

pub fn backtest(cfg: &RunConfig, pool_file: &Path, split: Split) -> Result<BacktestSummary> {
    let pool = load_pool(pool_file)?;
    let panel = cfg.load_panel()?;
    let mut stage = Stage::new(&cfg.out, "backtest")?;
    let summary = backtest_on(&panel, cfg, &pool, split, &cfg.backtest, &mut stage)?;
    stage.write_json(CONFIG_FILE, cfg)?;
    stage.commit()?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub pool: PoolCheckpoint,
    pub eval: Vec<EvalRecord>,
    pub backtest_test: BacktestSummary,
    pub updates: usize,
    pub final_env_steps: Option<u64>,
}

/// Metrics on every split, a test backtest, and the plot series (pool
/// objective against steps, net worth) as CSV.
pub fn report(cfg: &RunConfig, pool_file: &Path) -> Result<Report> {
    let pool = load_pool(pool_file)?;
    let panel = cfg.load_panel()?;
    let eval = [Split::Train, Split::Valid, Split::Test]
        .into_iter()
        .map(|s| eval_on(&panel, cfg, &pool, s))
        .collect::<Result<Vec<_>>>()?;
    let mut stage = Stage::new(&cfg.out, "report")?;
    let backtest_test = backtest_on(&panel, cfg, &pool, Split::Test, &cfg.backtest, &mut stage)?;

    let log_path = pool_file.with_file_name(TRAIN_LOG_FILE);
    let mut curve = String::from("env_steps,pool_objective\n");
    let (mut updates, mut last_steps) = (0, None);
    if let Ok(text) = std::fs::read_to_string(&log_path) {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: serde_json::Value =
                serde_json::from_str(line).with_context(|| format!("parsing {}", log_path.display()))?;
            let steps = rec["env_steps"].as_u64().unwrap_or_default();
            curve.push_str(&format!("{},{}\n", steps, rec["pool_objective"]));
            updates += 1;
            last_steps = Some(steps);
        }
    } else {
        log::warn!("no training log at {}; objective curve left empty", log_path.display());
    }
    stage.write("objective_curve.csv", curve.as_bytes())?;
    let report = Report {
        pool,
        eval,
        backtest_test,
        updates,
        final_env_steps: last_steps,
    };
    stage.write_json("report.json", &report)?;
    stage.write_json(CONFIG_FILE, cfg)?;
    stage.commit()?;
    Ok(report)
}

pub fn vocab() -> serde_json::Value {
    Vocabulary::default().to_json()
}
