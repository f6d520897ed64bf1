//! Rollout storage and advantage estimation.

use serde::{Deserialize, Serialize};

use crate::AgentError;

/// One episode's transitions. `inputs[t]` is the token fed to the encoder to
/// reach state `t` (the begin id first, then the previous actions).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpisodeBuffer {
    pub inputs: Vec<usize>,
    pub actions: Vec<usize>,
    pub masks: Vec<Vec<bool>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl EpisodeBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, input: usize, action: usize, mask: Vec<bool>, log_prob: f64, value: f64, reward: f64) {
        self.inputs.push(input);
        self.actions.push(action);
        self.masks.push(mask);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub episodes: Vec<EpisodeBuffer>,
}

impl RolloutBuffer {
    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(EpisodeBuffer::len).sum()
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
    }

    /// Fills advantages (generalized advantage estimation) and returns
    /// (`advantage + value`), then standardizes advantages over the buffer.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<(), AgentError> {
        self.compute_raw_advantages(gamma, lambda)?;
        let all: Vec<f64> = self
            .episodes
            .iter()
            .flat_map(|e| e.advantages.iter().copied())
            .collect();
        if all.is_empty() {
            return Ok(());
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        for e in &mut self.episodes {
            for a in &mut e.advantages {
                *a = (*a - mean) / (std + 1e-8);
            }
        }
        Ok(())
    }

    /// Advantages and returns without standardization.
    pub fn compute_raw_advantages(&mut self, gamma: f64, lambda: f64) -> Result<(), AgentError> {
        for e in &mut self.episodes {
            if !e.done {
                return Err(AgentError::IncompleteEpisode);
            }
            let len = e.len();
            e.advantages = vec![0.0; len];
            let mut next_value = 0.0;
            let mut running = 0.0;
            for t in (0..len).rev() {
                let delta = e.rewards[t] + gamma * next_value - e.values[t];
                running = delta + gamma * lambda * running;
                e.advantages[t] = running;
                next_value = e.values[t];
            }
            e.returns = e.advantages.iter().zip(&e.values).map(|(a, v)| a + v).collect();
        }
        Ok(())
    }
}
