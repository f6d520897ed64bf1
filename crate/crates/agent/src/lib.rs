//! Recurrent actor-critic that writes formulas token by token, trained with a
//! clipped policy-gradient objective against the pool's combined IC.

pub mod adam;
pub mod buffer;
pub mod dist;
pub mod net;
pub mod ppo;
pub mod trainer;

use alphamine_core::env::EnvError;
use alphamine_core::pool::PoolError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("every action is masked")]
    AllMasked,
    #[error("rollout buffer holds an unfinished episode")]
    IncompleteEpisode,
    #[error("advantages have not been computed for the buffer")]
    MissingAdvantages,
    #[error("non-finite loss or gradient; update aborted")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
