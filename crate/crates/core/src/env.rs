//! Episodic token-generation environment. A state is a token prefix, an
//! action appends one vocabulary token, and the only non-zero reward arrives
//! at termination: the shared pool's objective after absorbing the generated
//! alpha, or -1 for an unusable formula.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_rpn_with_cap, valid_next_tokens_with_cap, DslError, Expression, Token, Vocabulary, MAX_TOKENS};
use crate::eval::{evaluate, semantic_validity, AlphaMatrix, DEFAULT_MIN_VALID_FRACTION};
use crate::panel::{DayRange, PanelData};
use crate::pool::{AlphaPool, PoolError};

pub const INVALID_REWARD: f64 = -1.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action {action} is masked at this state")]
    MaskedAction { action: usize },
    #[error("no action is available at a non-terminal state")]
    EmptyMask,
    #[error("the episode has terminated; call reset")]
    Terminated,
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_tokens: usize,
    pub min_valid_fraction: f64,
    /// Evaluated matrices kept for reuse across episodes.
    pub cache_capacity: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_tokens: MAX_TOKENS,
            min_valid_fraction: DEFAULT_MIN_VALID_FRACTION,
            cache_capacity: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub tokens: Vec<Token>,
    pub step_count: usize,
}

impl MdpState {
    pub fn initial() -> Self {
        Self {
            tokens: vec![Token::Begin],
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalKind {
    /// SEP on a new, valid alpha that entered the pool.
    Added,
    /// SEP on a valid alpha already in the pool.
    Duplicate,
    /// SEP on a formula that fails semantic validity.
    Invalid,
    /// Length cap reached without SEP.
    Overflow,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: MdpState,
    pub reward: f64,
    pub terminal: bool,
    pub kind: Option<TerminalKind>,
    pub expression: Option<Expression>,
}

/// Evaluation memo keyed by canonical formula text. Invalid formulas are
/// remembered indefinitely; matrices are dropped oldest first.
#[derive(Debug, Default)]
struct EvalCache {
    invalid: HashSet<String>,
    matrices: HashMap<String, Arc<AlphaMatrix>>,
    order: VecDeque<String>,
    capacity: usize,
    hits: u64,
    misses: u64,
}

impl EvalCache {
    fn get_or_eval(
        &mut self,
        expr: &Expression,
        panel: &PanelData,
        range: DayRange,
        min_valid_fraction: f64,
    ) -> Option<Arc<AlphaMatrix>> {
        let key = expr.to_infix_string();
        if self.invalid.contains(&key) {
            self.hits += 1;
            return None;
        }
        if let Some(m) = self.matrices.get(&key) {
            self.hits += 1;
            return Some(Arc::clone(m));
        }
        self.misses += 1;
        let m = evaluate(expr, panel, range);
        if !semantic_validity(&m, min_valid_fraction) {
            self.invalid.insert(key);
            return None;
        }
        let m = Arc::new(m);
        if self.capacity > 0 {
            if self.order.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.matrices.remove(&old);
                }
            }
            self.order.push_back(key.clone());
            self.matrices.insert(key, Arc::clone(&m));
        }
        Some(m)
    }
}

pub struct AlphaEnv {
    panel: Arc<PanelData>,
    range: DayRange,
    vocab: Vocabulary,
    config: EnvConfig,
    pool: AlphaPool,
    rng: ChaCha8Rng,
    cache: EvalCache,
    state: MdpState,
    done: bool,
}

impl AlphaEnv {
    /// `seed` drives the pool's initial weights for new alphas.
    pub fn new(
        panel: Arc<PanelData>,
        range: DayRange,
        vocab: Vocabulary,
        pool: AlphaPool,
        config: EnvConfig,
        seed: u64,
    ) -> Self {
        assert_eq!(pool.range(), range, "pool must be scored on the reward range");
        Self {
            cache: EvalCache {
                capacity: config.cache_capacity,
                ..EvalCache::default()
            },
            panel,
            range,
            vocab,
            config,
            pool,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: MdpState::initial(),
            done: false,
        }
    }

    pub fn reset(&mut self) -> MdpState {
        self.state = MdpState::initial();
        self.done = false;
        self.state.clone()
    }

    pub fn state(&self) -> &MdpState {
        &self.state
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn pool(&self) -> &AlphaPool {
        &self.pool
    }

    pub fn into_pool(self) -> AlphaPool {
        self.pool
    }

    pub fn panel(&self) -> &Arc<PanelData> {
        &self.panel
    }

    pub fn range(&self) -> DayRange {
        self.range
    }

    pub fn config(&self) -> EnvConfig {
        self.config
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Replaces the pool and weight-init stream, e.g. when resuming.
    pub fn restore(&mut self, pool: AlphaPool, rng: ChaCha8Rng) {
        assert_eq!(pool.range(), self.range, "pool must be scored on the reward range");
        self.pool = pool;
        self.rng = rng;
        self.reset();
    }

    /// (hits, misses) of the evaluation cache.
    pub fn cache_stats(&self) -> (u64, u64) {
        (self.cache.hits, self.cache.misses)
    }

    pub fn action_mask(&self) -> Result<Vec<bool>, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        let mask = valid_next_tokens_with_cap(&self.state.tokens, &self.vocab, self.config.max_tokens)?;
        if !mask.iter().any(|&m| m) {
            return Err(EnvError::EmptyMask);
        }
        Ok(mask)
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let mask = self.action_mask()?;
        if !mask.get(action).copied().unwrap_or(false) {
            return Err(EnvError::MaskedAction { action });
        }
        let token = self.vocab.token(action);
        self.state.tokens.push(token);
        self.state.step_count += 1;

        let (reward, kind, expression) = if token == Token::Sep {
            let expr = parse_rpn_with_cap(&self.state.tokens, self.config.max_tokens)?;
            let (reward, kind) = self.score(&expr)?;
            (reward, Some(kind), Some(expr))
        } else if self.state.tokens.len() >= self.config.max_tokens {
            (INVALID_REWARD, Some(TerminalKind::Overflow), None)
        } else {
            (0.0, None, None)
        };
        self.done = kind.is_some();
        Ok(StepOutcome {
            next_state: self.state.clone(),
            reward,
            terminal: self.done,
            kind,
            expression,
        })
    }

    fn score(&mut self, expr: &Expression) -> Result<(f64, TerminalKind), EnvError> {
        if self.pool.contains(expr) {
            return Ok((self.pool.objective(), TerminalKind::Duplicate));
        }
        let Some(matrix) = self
            .cache
            .get_or_eval(expr, &self.panel, self.range, self.config.min_valid_fraction)
        else {
            return Ok((INVALID_REWARD, TerminalKind::Invalid));
        };
        match self.pool.add_alpha(expr.clone(), &matrix, &mut self.rng) {
            Ok(out) => Ok((out.objective, TerminalKind::Added)),
            Err(PoolError::Degenerate(text)) => {
                log::debug!("alpha {text} has no overlap with the target; treated as invalid");
                Ok((INVALID_REWARD, TerminalKind::Invalid))
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// A stochastic policy over unmasked actions.
pub trait TokenChooser {
    fn choose(&mut self, state: &MdpState, mask: &[bool], rng: &mut dyn RngCore) -> usize;
}

/// Picks uniformly among allowed actions.
#[derive(Debug, Default, Clone, Copy)]
pub struct UniformChooser;

impl TokenChooser for UniformChooser {
    fn choose(&mut self, _state: &MdpState, mask: &[bool], rng: &mut dyn RngCore) -> usize {
        let allowed: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        allowed[(rng.next_u64() % allowed.len() as u64) as usize]
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: MdpState,
    pub action: usize,
    pub mask: Vec<bool>,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub reward: f64,
    pub kind: TerminalKind,
    pub expression: Option<Expression>,
}

/// Plays one episode from reset to termination.
pub fn episode_rollout<C: TokenChooser + ?Sized>(
    env: &mut AlphaEnv,
    chooser: &mut C,
    rng: &mut dyn RngCore,
) -> Result<Episode, EnvError> {
    let mut state = env.reset();
    let mut transitions = Vec::new();
    loop {
        let mask = env.action_mask()?;
        let action = chooser.choose(&state, &mask, rng);
        let out = env.step(action)?;
        transitions.push(Transition {
            state,
            action,
            mask,
            reward: out.reward,
        });
        if out.terminal {
            return Ok(Episode {
                transitions,
                reward: out.reward,
                kind: out.kind.expect("terminal steps carry a kind"),
                expression: out.expression,
            });
        }
        state = out.next_state;
    }
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub expression: Option<String>,
    pub reward: f64,
    pub pool_objective: f64,
    pub pool_size: usize,
    pub kind: TerminalKind,
}

impl EpisodeRecord {
    pub fn new(episode: u64, ep: &Episode, pool: &AlphaPool) -> Self {
        Self {
            episode,
            expression: ep.expression.as_ref().map(|e| e.to_infix_string()),
            reward: ep.reward,
            pool_objective: pool.objective(),
            pool_size: pool.len(),
            kind: ep.kind,
        }
    }
}
