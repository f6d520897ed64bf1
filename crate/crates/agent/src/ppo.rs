//! Clipped-surrogate policy optimization over masked action distributions.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{clip_grad_norm, Adam};
use crate::buffer::{EpisodeBuffer, RolloutBuffer};
use crate::dist::{entropy, masked_log_softmax};
use crate::net::PolicyNet;
use crate::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub epochs_per_update: usize,
    /// Target transitions per minibatch; minibatches hold whole episodes.
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub rollout_episodes_per_update: usize,
    pub max_env_steps: u64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            discount: 1.0,
            gae_lambda: 0.95,
            epochs_per_update: 4,
            minibatch_size: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            rollout_episodes_per_update: 64,
            max_env_steps: 100_000,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if self.discount != 1.0 {
            return bad("discount is fixed at 1.0");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.rollout_episodes_per_update == 0 {
            return bad("epochs, minibatch size and rollout episodes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning rate and gradient norm bound must be positive");
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Loss terms and diagnostics averaged over a set of transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    /// Minimized objective: `-surrogate + c_v * value_mse - c_e * entropy`.
    pub total: f64,
    pub surrogate: f64,
    pub value_mse: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Largest `|ratio - 1|` seen.
    pub max_ratio_deviation: f64,
    pub count: usize,
}

impl LossStats {
    fn merge(&mut self, o: &LossStats) {
        let (a, b) = (self.count as f64, o.count as f64);
        let n = a + b;
        if n == 0.0 {
            return;
        }
        let mix = |x: f64, y: f64| (x * a + y * b) / n;
        self.total = mix(self.total, o.total);
        self.surrogate = mix(self.surrogate, o.surrogate);
        self.value_mse = mix(self.value_mse, o.value_mse);
        self.entropy = mix(self.entropy, o.entropy);
        self.mean_ratio = mix(self.mean_ratio, o.mean_ratio);
        self.clip_fraction = mix(self.clip_fraction, o.clip_fraction);
        self.approx_kl = mix(self.approx_kl, o.approx_kl);
        self.max_ratio_deviation = self.max_ratio_deviation.max(o.max_ratio_deviation);
        self.count += o.count;
    }
}

/// Loss over `episodes` and, when `grad` is given, its gradient (added to
/// `grad`). Dropout is active only when `dropout_rng` is provided.
pub fn ppo_loss<R: Rng + ?Sized>(
    net: &PolicyNet,
    episodes: &[&EpisodeBuffer],
    cfg: &PpoConfig,
    mut dropout_rng: Option<&mut R>,
    mut grad: Option<&mut [f64]>,
) -> Result<LossStats, AgentError> {
    let count: usize = episodes.iter().map(|e| e.len()).sum();
    if count == 0 {
        return Ok(LossStats::default());
    }
    let inv = 1.0 / count as f64;
    let eps = cfg.clip_epsilon;
    let mut s = LossStats {
        count,
        ..LossStats::default()
    };
    for ep in episodes {
        let trace = net.forward_trace(&ep.inputs, dropout_rng.as_deref_mut());
        let mut dlogits = Vec::with_capacity(ep.len());
        let mut dvalue = Vec::with_capacity(ep.len());
        for t in 0..ep.len() {
            let out = &trace.outputs[t];
            let lp = masked_log_softmax(&out.logits, &ep.masks[t])?;
            let a = ep.actions[t];
            let adv = ep.advantages[t];
            let log_ratio = lp[a] - ep.log_probs[t];
            let ratio = log_ratio.exp();
            let surr = clipped_surrogate(ratio, adv, eps);
            let h = entropy(&lp);
            let verr = out.value - ep.returns[t];

            s.surrogate += surr * inv;
            s.value_mse += verr * verr * inv;
            s.entropy += h * inv;
            s.mean_ratio += ratio * inv;
            s.clip_fraction += f64::from(u8::from((ratio - 1.0).abs() > eps)) * inv;
            s.approx_kl += ((ratio - 1.0) - log_ratio) * inv;
            s.max_ratio_deviation = s.max_ratio_deviation.max((ratio - 1.0).abs());

            if grad.is_some() {
                // d(-surr)/d logp(a): active only on the unclipped branch
                let unclipped = ratio * adv <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                let g_logp = if unclipped { -adv * ratio } else { 0.0 };
                let mut dz = vec![0.0; lp.len()];
                for (j, &lpj) in lp.iter().enumerate() {
                    if !ep.masks[t][j] {
                        continue;
                    }
                    let p = lpj.exp();
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    // surrogate through log-prob, entropy bonus through the softmax
                    dz[j] = inv * (g_logp * (onehot - p) + cfg.entropy_coef * p * (lpj + h));
                }
                dlogits.push(dz);
                dvalue.push(inv * 2.0 * cfg.value_coef * verr);
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            net.backward(&trace, &dlogits, &dvalue, g);
        }
    }
    s.total = -s.surrogate + cfg.value_coef * s.value_mse - cfg.entropy_coef * s.entropy;
    if !s.total.is_finite() {
        return Err(AgentError::NonFinite);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Averages over every minibatch of every epoch.
    pub loss: LossStats,
    /// Averages over the first epoch only.
    pub first_epoch: LossStats,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Groups episodes (in the given order) into minibatches of at least
/// `target` transitions; the tail batch may be smaller.
fn minibatches(order: &[usize], buffer: &RolloutBuffer, target: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut size = 0;
    for &i in order {
        cur.push(i);
        size += buffer.episodes[i].len();
        if size >= target {
            out.push(std::mem::take(&mut cur));
            size = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Runs the optimization phase on a buffer whose advantages are filled.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut PolicyNet,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, AgentError> {
    if buffer.episodes.iter().any(|e| e.advantages.len() != e.len()) {
        return Err(AgentError::MissingAdvantages);
    }
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..buffer.episodes.len()).collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut norm_sum = 0.0;
    for epoch in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for batch in minibatches(&order, buffer, cfg.minibatch_size) {
            let eps: Vec<&EpisodeBuffer> = batch.iter().map(|&i| &buffer.episodes[i]).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let use_dropout = net.config().dropout > 0.0;
            let s = if use_dropout {
                ppo_loss(net, &eps, cfg, Some(&mut *rng), Some(&mut grad))?
            } else {
                ppo_loss::<R>(net, &eps, cfg, None, Some(&mut grad))?
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(AgentError::NonFinite);
            }
            norm_sum += clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.update(&mut net.params, &grad);
            stats.loss.merge(&s);
            if epoch == 0 {
                stats.first_epoch.merge(&s);
            }
            stats.minibatches += 1;
        }
    }
    stats.grad_norm = if stats.minibatches > 0 {
        norm_sum / stats.minibatches as f64
    } else {
        0.0
    };
    Ok(stats)
}

/// Largest relative difference between the analytic gradient of the full
/// loss and central finite differences, over every parameter. Dropout is
/// not used.
pub fn gradient_check(net: &PolicyNet, buffer: &RolloutBuffer, cfg: &PpoConfig, step: f64) -> Result<f64, AgentError> {
    let eps: Vec<&EpisodeBuffer> = buffer.episodes.iter().collect();
    let mut grad = vec![0.0; net.num_params()];
    ppo_loss::<rand_chacha::ChaCha8Rng>(net, &eps, cfg, None, Some(&mut grad))?;
    let mut probe = net.clone();
    let mut worst = 0.0_f64;
    for i in 0..net.num_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = ppo_loss::<rand_chacha::ChaCha8Rng>(&probe, &eps, cfg, None, None)?.total;
        probe.params[i] = orig - step;
        let down = ppo_loss::<rand_chacha::ChaCha8Rng>(&probe, &eps, cfg, None, None)?.total;
        probe.params[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let scale = fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    Ok(worst)
}
