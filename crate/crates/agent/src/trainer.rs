//! Alternates rollout collection in the mining environment with policy
//! updates until the environment-step budget is spent.

use std::io::Write;

use alphamine_core::env::{AlphaEnv, EpisodeRecord, TerminalKind};
use alphamine_core::pool::{AlphaPool, PoolCheckpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::buffer::{EpisodeBuffer, RolloutBuffer};
use crate::dist::{masked_log_softmax, sample};
use crate::net::{NetConfig, PolicyNet};
use crate::ppo::{ppo_update, PpoConfig, UpdateStats};
use crate::AgentError;

pub const AGENT_CHECKPOINT_VERSION: u32 = 1;

/// One line of the update log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub pool_objective: f64,
    pub pool_size: usize,
    pub mean_reward: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub approx_kl: f64,
    pub value_loss: f64,
    pub policy_objective: f64,
    pub grad_norm: f64,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub net: NetConfig,
    pub params: Vec<f64>,
    pub adam: Adam,
    pub ppo: PpoConfig,
    pub rng: ChaCha8Rng,
    pub env_rng: ChaCha8Rng,
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub pool: PoolCheckpoint,
}

impl AgentCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<(), AgentError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AgentError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Self = serde_json::from_reader(f)?;
        if ckpt.version != AGENT_CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        Ok(ckpt)
    }
}

pub struct Trainer {
    net: PolicyNet,
    adam: Adam,
    cfg: PpoConfig,
    env: AlphaEnv,
    rng: ChaCha8Rng,
    env_steps: u64,
    updates: u64,
    episodes: u64,
    update_log: Vec<UpdateRecord>,
    episode_log: Vec<EpisodeRecord>,
}

impl Trainer {
    /// Fresh network sized to the environment's vocabulary. All randomness
    /// flows from `cfg.seed`.
    pub fn new(env: AlphaEnv, net_config: NetConfig, cfg: PpoConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        if net_config.vocab_size != env.vocab().len() {
            return Err(AgentError::Config(format!(
                "network vocabulary {} differs from environment vocabulary {}",
                net_config.vocab_size,
                env.vocab().len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = PolicyNet::new(net_config, &mut rng);
        let adam = Adam::new(net.num_params(), cfg.learning_rate);
        Ok(Self {
            net,
            adam,
            cfg,
            env,
            rng,
            env_steps: 0,
            updates: 0,
            episodes: 0,
            update_log: Vec::new(),
            episode_log: Vec::new(),
        })
    }

    /// Continues from a checkpoint. `env` must be built on the same panel and
    /// range; its pool is replaced by the checkpointed one. `max_env_steps`
    /// may be raised to extend the run.
    pub fn resume(mut env: AlphaEnv, ckpt: AgentCheckpoint, max_env_steps: u64) -> Result<Self, AgentError> {
        if ckpt.version != AGENT_CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        let net = PolicyNet::from_params(ckpt.net, ckpt.params)
            .ok_or_else(|| AgentError::Checkpoint("parameter count does not match the network shape".into()))?;
        if ckpt.net.vocab_size != env.vocab().len() {
            return Err(AgentError::Checkpoint(
                "vocabulary size differs from the environment".into(),
            ));
        }
        if ckpt.adam.m.len() != net.num_params() || ckpt.adam.v.len() != net.num_params() {
            return Err(AgentError::Checkpoint(
                "optimizer state does not match the network".into(),
            ));
        }
        let gd = env.pool().gd_config();
        let pool = AlphaPool::restore(&ckpt.pool, env.panel(), env.range(), gd)?;
        env.restore(pool, ckpt.env_rng);
        let cfg = PpoConfig {
            max_env_steps,
            ..ckpt.ppo
        };
        cfg.validate()?;
        Ok(Self {
            net,
            adam: ckpt.adam,
            cfg,
            env,
            rng: ckpt.rng,
            env_steps: ckpt.env_steps,
            updates: ckpt.updates,
            episodes: ckpt.episodes,
            update_log: Vec::new(),
            episode_log: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            version: AGENT_CHECKPOINT_VERSION,
            net: *self.net.config(),
            params: self.net.params.clone(),
            adam: self.adam.clone(),
            ppo: self.cfg,
            rng: self.rng.clone(),
            env_rng: self.env.rng().clone(),
            env_steps: self.env_steps,
            updates: self.updates,
            episodes: self.episodes,
            pool: self.env.pool().to_checkpoint(),
        }
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    pub fn env(&self) -> &AlphaEnv {
        &self.env
    }

    pub fn pool(&self) -> &AlphaPool {
        self.env.pool()
    }

    pub fn into_pool(self) -> AlphaPool {
        self.env.into_pool()
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn update_log(&self) -> &[UpdateRecord] {
        &self.update_log
    }

    pub fn episode_log(&self) -> &[EpisodeRecord] {
        &self.episode_log
    }

    /// Longest possible episode, in environment steps.
    fn max_episode_len(&self) -> u64 {
        self.env.config().max_tokens.saturating_sub(1).max(1) as u64
    }

    /// Whether another episode fits in the remaining budget.
    pub fn has_budget(&self) -> bool {
        self.env_steps + self.max_episode_len() <= self.cfg.max_env_steps
    }

    fn play_episode(&mut self) -> Result<EpisodeBuffer, AgentError> {
        let mut ep = EpisodeBuffer::default();
        let mut carry = self.net.initial_carry();
        let mut input = self.net.begin_id();
        self.env.reset();
        loop {
            let mask = self.env.action_mask()?;
            let out = self.net.step(&mut carry, input);
            let lp = masked_log_softmax(&out.logits, &mask)?;
            let probs: Vec<f64> = lp.iter().map(|l| if l.is_finite() { l.exp() } else { 0.0 }).collect();
            let action = sample(&probs, &mut self.rng);
            let step = self.env.step(action)?;
            self.env_steps += 1;
            ep.push(input, action, mask, lp[action], out.value, step.reward);
            input = action;
            if step.terminal {
                ep.done = true;
                self.episodes += 1;
                let pool = self.env.pool();
                self.episode_log.push(EpisodeRecord {
                    episode: self.episodes,
                    expression: step.expression.as_ref().map(|e| e.to_infix_string()),
                    reward: step.reward,
                    pool_objective: pool.objective(),
                    pool_size: pool.len(),
                    kind: step.kind.unwrap_or(TerminalKind::Invalid),
                });
                return Ok(ep);
            }
        }
    }

    /// Collects up to `rollout_episodes_per_update` episodes within budget.
    pub fn collect(&mut self) -> Result<RolloutBuffer, AgentError> {
        let mut buffer = RolloutBuffer::default();
        while buffer.episodes.len() < self.cfg.rollout_episodes_per_update && self.has_budget() {
            let ep = self.play_episode()?;
            buffer.episodes.push(ep);
        }
        Ok(buffer)
    }

    /// One collection and update round. Returns `None` once the budget is
    /// exhausted.
    pub fn train_step(&mut self) -> Result<Option<UpdateRecord>, AgentError> {
        let mut buffer = self.collect()?;
        if buffer.episodes.is_empty() {
            return Ok(None);
        }
        let mean_reward = buffer
            .episodes
            .iter()
            .map(|e| e.rewards.last().copied().unwrap_or(0.0))
            .sum::<f64>()
            / buffer.episodes.len() as f64;
        buffer.compute_advantages(self.cfg.discount, self.cfg.gae_lambda)?;
        let stats: UpdateStats = ppo_update(&mut self.net, &mut self.adam, &buffer, &self.cfg, &mut self.rng)?;
        self.updates += 1;
        let pool = self.env.pool();
        let rec = UpdateRecord {
            update: self.updates,
            env_steps: self.env_steps,
            episodes: self.episodes,
            pool_objective: pool.objective(),
            pool_size: pool.len(),
            mean_reward,
            entropy: stats.first_epoch.entropy,
            clip_fraction: stats.loss.clip_fraction,
            mean_ratio: stats.loss.mean_ratio,
            approx_kl: stats.loss.approx_kl,
            value_loss: stats.loss.value_mse,
            policy_objective: stats.loss.surrogate,
            grad_norm: stats.grad_norm,
        };
        log::info!(
            "update {} steps {} objective {:.4} pool {} reward {:.3} entropy {:.3}",
            rec.update,
            rec.env_steps,
            rec.pool_objective,
            rec.pool_size,
            rec.mean_reward,
            rec.entropy
        );
        self.update_log.push(rec.clone());
        Ok(Some(rec))
    }

    /// Trains until the step budget is spent.
    pub fn train(&mut self) -> Result<(), AgentError> {
        while self.train_step()?.is_some() {}
        Ok(())
    }

    /// Runs at most `n` more rounds; returns how many ran.
    pub fn train_updates(&mut self, n: usize) -> Result<usize, AgentError> {
        for i in 0..n {
            if self.train_step()?.is_none() {
                return Ok(i);
            }
        }
        Ok(n)
    }
}

/// Writes records as JSON lines.
pub fn write_json_lines<T: Serialize, W: Write>(records: &[T], mut w: W) -> Result<(), AgentError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
