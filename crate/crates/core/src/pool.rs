//! The linear combination model over a bounded set of alphas.
//!
//! Every member and the target are normalized per day, so the squared error
//! of the combination reduces to cached quantities: each member's mean inner
//! product with the target and the mean inner product of every pair. Without
//! missing cells these are exactly the mean IC and the mean mutual IC. With
//! missing cells they are taken over zero-filled vectors and the days where
//! the target is usable, which keeps the pair matrix positive semidefinite.
//! Weight fitting never touches the per-day matrices again.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{DslError, Expression};
use crate::eval::{evaluate, semantic_validity, AlphaMatrix};
use crate::metrics::{self, mean_ic, paired_days};
use crate::panel::{DayRange, PanelData};

/// Ridge term added to the fitted objective (never to reported loss).
pub const RIDGE: f64 = 1e-6;

/// Range of the random initial weight given to a newly added alpha.
pub const INIT_WEIGHT_SCALE: f64 = 0.01;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("alpha `{0}` is already in the pool")]
    Duplicate(String),
    #[error("the pool is empty")]
    Empty,
    #[error("weight vector has {got} entries but the pool holds {expected} alphas")]
    WeightMismatch { got: usize, expected: usize },
    #[error("alpha matrix does not cover the pool's day range and universe")]
    ShapeMismatch,
    #[error("alpha `{0}` has no valid day against the target or pool members")]
    Degenerate(String),
    #[error("weight optimization diverged (non-finite loss)")]
    Diverged,
    #[error("alphas not evaluable on this data: {}", .0.join("; "))]
    NotEvaluable(Vec<String>),
    #[error("unsupported pool checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Parse(#[from] DslError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub steps: usize,
    /// Step size on the loss `L(w)` (which carries the `1/n` factor). The
    /// step is capped so every iteration is a descent step.
    pub learning_rate: f64,
    /// Early stop once the gradient's max-norm falls below this.
    pub stop_tolerance: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 5e-2,
            stop_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolMember {
    pub expr: Expression,
    /// Per-day normalized values over the pool's range.
    pub values: AlphaMatrix,
    /// Mean IC against the target.
    pub single_ic: f64,
    /// Mean zero-filled inner product with the target.
    pub target_inner: f64,
}

#[derive(Debug, Clone)]
pub struct AddOutcome {
    pub evicted: Option<Expression>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct AlphaPool {
    capacity: usize,
    target: AlphaMatrix,
    members: Vec<PoolMember>,
    weights: Vec<f64>,
    mutual: Vec<Vec<f64>>,
    /// Days of the range on which the target is usable.
    target_days: Vec<bool>,
    objective: f64,
    gd: GdConfig,
}

impl AlphaPool {
    /// Empty pool scored against `target` (normalized here, per day).
    pub fn new(target: &AlphaMatrix, capacity: usize, gd: GdConfig) -> Self {
        assert!(capacity >= 1, "pool capacity must be positive");
        assert!(
            gd.steps >= 1 && gd.learning_rate > 0.0,
            "invalid gradient-descent config"
        );
        let target = target.normalized();
        let target_days = target.days().map(|d| d.iter().any(|v| !v.is_nan())).collect();
        Self {
            capacity,
            target,
            target_days,
            members: Vec::new(),
            weights: Vec::new(),
            mutual: Vec::new(),
            objective: 0.0,
            gd,
        }
    }

    /// Pool scored against the panel's target over `range`.
    pub fn for_panel(panel: &PanelData, range: DayRange, capacity: usize, gd: GdConfig) -> Self {
        let n = panel.n_stocks();
        let target = panel.target()[range.start * n..(range.end + 1) * n].to_vec();
        Self::new(&AlphaMatrix::new(range, n, target), capacity, gd)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn range(&self) -> DayRange {
        self.target.range()
    }

    pub fn n_stocks(&self) -> usize {
        self.target.n_stocks()
    }

    pub fn gd_config(&self) -> GdConfig {
        self.gd
    }

    pub fn members(&self) -> &[PoolMember] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean IC of the current combination against the target.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn single_ic(&self, i: usize) -> f64 {
        self.members[i].single_ic
    }

    /// Cached pair term of the loss; the mean mutual IC when neither
    /// member has missing cells.
    pub fn mutual_ic(&self, i: usize, j: usize) -> f64 {
        self.mutual[i][j]
    }

    /// Mean over target-usable days of the zero-filled inner product.
    fn mean_inner(&self, a: &AlphaMatrix, b: &AlphaMatrix) -> f64 {
        let mut total = 0.0;
        let mut days = 0usize;
        for ((da, db), &usable) in a.days().zip(b.days()).zip(&self.target_days) {
            if !usable {
                continue;
            }
            days += 1;
            total += da
                .iter()
                .zip(db)
                .filter(|(x, y)| !x.is_nan() && !y.is_nan())
                .map(|(x, y)| x * y)
                .sum::<f64>();
        }
        if days == 0 {
            0.0
        } else {
            total / days as f64
        }
    }

    /// Appends a member (normalized values) and its cache entries.
    fn push_member(&mut self, expr: Expression, values: AlphaMatrix) -> Result<(), PoolError> {
        let n = self.n_stocks();
        let single_ic = mean_ic(paired_days(values.values(), self.target.values(), n))
            .map_err(|_| PoolError::Degenerate(expr.to_infix_string()))?;
        let target_inner = self.mean_inner(&values, &self.target);
        let mut row: Vec<f64> = self
            .members
            .iter()
            .map(|m| self.mean_inner(&m.values, &values))
            .collect();
        row.push(self.mean_inner(&values, &values));
        for (existing, &m) in self.mutual.iter_mut().zip(&row) {
            existing.push(m);
        }
        self.mutual.push(row);
        self.members.push(PoolMember {
            expr,
            values,
            single_ic,
            target_inner,
        });
        Ok(())
    }

    /// Normalized target over the pool's range.
    pub fn target(&self) -> &AlphaMatrix {
        &self.target
    }

    pub fn contains(&self, expr: &Expression) -> bool {
        self.members.iter().any(|m| m.expr == *expr)
    }

    fn check_weights(&self, w: &[f64]) -> Result<(), PoolError> {
        if w.len() != self.members.len() {
            return Err(PoolError::WeightMismatch {
                got: w.len(),
                expected: self.members.len(),
            });
        }
        Ok(())
    }

    /// `1 - 2 w.s + w'Mw` without the `1/n` factor.
    fn unscaled_loss(&self, w: &[f64]) -> f64 {
        let mut total = 1.0;
        for (i, wi) in w.iter().enumerate() {
            total -= 2.0 * wi * self.members[i].target_inner;
            total += wi * w.iter().zip(&self.mutual[i]).map(|(wj, m)| wj * m).sum::<f64>();
        }
        total
    }

    /// Gradient of [`Self::unscaled_loss`].
    fn unscaled_gradient(&self, w: &[f64]) -> Vec<f64> {
        (0..w.len())
            .map(|i| {
                let mw: f64 = w.iter().zip(&self.mutual[i]).map(|(wj, m)| wj * m).sum();
                2.0 * (mw - self.members[i].target_inner)
            })
            .collect()
    }

    /// Mean squared error of the combination, from cached ICs only.
    pub fn loss(&self, w: &[f64]) -> Result<f64, PoolError> {
        self.check_weights(w)?;
        Ok(self.unscaled_loss(w) / self.n_stocks() as f64)
    }

    pub fn loss_gradient(&self, w: &[f64]) -> Result<Vec<f64>, PoolError> {
        self.check_weights(w)?;
        let n = self.n_stocks() as f64;
        Ok(self.unscaled_gradient(w).into_iter().map(|g| g / n).collect())
    }

    /// Gradient descent on the ridge-stabilized loss, starting from `init`.
    /// The result never has a higher loss than `init`.
    pub fn optimize_weights(&self, init: &[f64]) -> Result<Vec<f64>, PoolError> {
        self.check_weights(init)?;
        if init.is_empty() {
            return Ok(Vec::new());
        }
        let fitted = |w: &[f64]| self.unscaled_loss(w) + RIDGE * w.iter().map(|x| x * x).sum::<f64>();
        let curvature = 2.0
            * (self
                .mutual
                .iter()
                .map(|row| row.iter().map(|m| m.abs()).sum::<f64>())
                .fold(0.0, f64::max)
                + RIDGE);
        // iterate on the unscaled quadratic: a step of `lr` on L(w) is a
        // step of `lr / n` there
        let step = (self.gd.learning_rate / self.n_stocks() as f64).min(1.0 / curvature);

        let mut w = init.to_vec();
        for _ in 0..self.gd.steps {
            let mut grad = self.unscaled_gradient(&w);
            grad.iter_mut().zip(&w).for_each(|(g, wi)| *g += 2.0 * RIDGE * wi);
            if grad.iter().all(|g| g.abs() < self.gd.stop_tolerance) {
                break;
            }
            w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= step * g);
        }
        let (start, end) = (fitted(init), fitted(&w));
        if !end.is_finite() {
            return Err(PoolError::Diverged);
        }
        Ok(if end <= start { w } else { init.to_vec() })
    }

    /// Adds an alpha (raw or normalized values over the pool's range), refits
    /// the weights, and evicts the smallest-|weight| member when the pool
    /// overflows. On error the pool is unchanged.
    pub fn add_alpha<R: Rng + ?Sized>(
        &mut self,
        expr: Expression,
        matrix: &AlphaMatrix,
        rng: &mut R,
    ) -> Result<AddOutcome, PoolError> {
        if self.contains(&expr) {
            return Err(PoolError::Duplicate(expr.to_infix_string()));
        }
        if matrix.range() != self.range() || matrix.n_stocks() != self.n_stocks() {
            return Err(PoolError::ShapeMismatch);
        }
        self.push_member(expr, matrix.normalized())?;
        let mut init = self.weights.clone();
        init.push(rng.random_range(-INIT_WEIGHT_SCALE..=INIT_WEIGHT_SCALE));

        let fitted = match self.optimize_weights(&init) {
            Ok(w) => w,
            Err(e) => {
                self.remove(self.members.len() - 1);
                return Err(e);
            }
        };
        // The squared-error fit does not strictly maximize mean IC. Never
        // accept a fit whose IC is below leaving the newcomer at weight 0.
        self.weights = fitted;
        if self.members.len() > 1 {
            let fitted_ic = self.combined_ic();
            let mut without = init;
            *without.last_mut().expect("newcomer weight") = 0.0;
            let fitted = std::mem::replace(&mut self.weights, without);
            if fitted_ic >= self.combined_ic() {
                self.weights = fitted;
            }
        }

        let evicted = if self.members.len() > self.capacity {
            let worst = self
                .weights
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i)
                .expect("pool is non-empty");
            Some(self.remove(worst).expr)
        } else {
            None
        };
        self.objective = self.combined_ic();
        Ok(AddOutcome {
            evicted,
            objective: self.objective,
        })
    }

    fn remove(&mut self, idx: usize) -> PoolMember {
        self.mutual.remove(idx);
        for row in &mut self.mutual {
            row.remove(idx);
        }
        if idx < self.weights.len() {
            self.weights.remove(idx);
        }
        self.members.remove(idx)
    }

    /// Overrides the weights (e.g. when restoring a checkpoint).
    pub fn set_weights(&mut self, w: Vec<f64>) -> Result<(), PoolError> {
        self.check_weights(&w)?;
        self.weights = w;
        self.objective = self.combined_ic();
        Ok(())
    }

    /// Weighted sum of the members' normalized values on the `i`-th day of
    /// the range; a cell missing in any member is missing.
    pub fn combined_values(&self, day: usize) -> Result<Vec<f64>, PoolError> {
        if self.members.is_empty() {
            return Err(PoolError::Empty);
        }
        let mut out = vec![0.0; self.n_stocks()];
        for (m, w) in self.members.iter().zip(&self.weights) {
            out.iter_mut().zip(m.values.day(day)).for_each(|(o, v)| *o += w * v);
        }
        Ok(out)
    }

    pub fn combined_matrix(&self) -> Result<AlphaMatrix, PoolError> {
        let members: Vec<&AlphaMatrix> = self.members.iter().map(|m| &m.values).collect();
        combine(&members, &self.weights)
    }

    fn combined_ic(&self) -> f64 {
        let Ok(combined) = self.combined_matrix() else {
            return 0.0;
        };
        match mean_ic(paired_days(combined.values(), self.target.values(), self.n_stocks())) {
            Ok(ic) => ic,
            Err(metrics::Degenerate) => {
                log::warn!("combined alpha is degenerate on every day; objective set to 0");
                0.0
            }
        }
    }

    pub fn to_checkpoint(&self) -> PoolCheckpoint {
        PoolCheckpoint {
            version: CHECKPOINT_VERSION,
            capacity: self.capacity,
            objective: self.objective,
            alphas: self
                .members
                .iter()
                .zip(&self.weights)
                .map(|(m, &weight)| CheckpointAlpha {
                    expression: m.expr.to_infix_string(),
                    weight,
                })
                .collect(),
        }
    }

    /// Rebuilds a pool from a checkpoint: caches are recomputed from the
    /// panel and the stored weights are installed as-is.
    pub fn restore(
        checkpoint: &PoolCheckpoint,
        panel: &PanelData,
        range: DayRange,
        gd: GdConfig,
    ) -> Result<Self, PoolError> {
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(PoolError::Version(checkpoint.version));
        }
        let mut pool = AlphaPool::for_panel(panel, range, checkpoint.capacity, gd);
        for expr in checkpoint.expressions()? {
            let values = evaluate(&expr, panel, range).normalized();
            pool.push_member(expr, values)?;
        }
        pool.set_weights(checkpoint.alphas.iter().map(|a| a.weight).collect())?;
        Ok(pool)
    }
}

/// Weighted sum of per-day normalized matrices sharing one range.
pub fn combine(members: &[&AlphaMatrix], weights: &[f64]) -> Result<AlphaMatrix, PoolError> {
    let first = members.first().ok_or(PoolError::Empty)?;
    if weights.len() != members.len() {
        return Err(PoolError::WeightMismatch {
            got: weights.len(),
            expected: members.len(),
        });
    }
    let mut out = vec![0.0; first.values().len()];
    for (m, w) in members.iter().zip(weights) {
        if m.range() != first.range() || m.n_stocks() != first.n_stocks() {
            return Err(PoolError::ShapeMismatch);
        }
        out.iter_mut().zip(m.values()).for_each(|(o, v)| *o += w * v);
    }
    Ok(AlphaMatrix::new(first.range(), first.n_stocks(), out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAlpha {
    pub expression: String,
    pub weight: f64,
}

/// On-disk form of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCheckpoint {
    pub version: u32,
    pub capacity: usize,
    pub objective: f64,
    pub alphas: Vec<CheckpointAlpha>,
}

impl PoolCheckpoint {
    pub fn expressions(&self) -> Result<Vec<Expression>, PoolError> {
        self.alphas
            .iter()
            .map(|a| Expression::parse_infix(&a.expression).map_err(PoolError::from))
            .collect()
    }

    /// The combined signal on an arbitrary range with the stored weights.
    /// Fails listing every alpha that is not semantically valid there.
    pub fn combined_signal(
        &self,
        panel: &PanelData,
        range: DayRange,
        min_valid_fraction: f64,
    ) -> Result<AlphaMatrix, PoolError> {
        if self.alphas.is_empty() {
            return Err(PoolError::Empty);
        }
        let exprs = self.expressions()?;
        let mut matrices = Vec::with_capacity(exprs.len());
        let mut bad = Vec::new();
        for expr in &exprs {
            let m = evaluate(expr, panel, range);
            if !semantic_validity(&m, min_valid_fraction) {
                bad.push(expr.to_infix_string());
            }
            matrices.push(m.normalized());
        }
        if !bad.is_empty() {
            return Err(PoolError::NotEvaluable(bad));
        }
        let refs: Vec<&AlphaMatrix> = matrices.iter().collect();
        let weights: Vec<f64> = self.alphas.iter().map(|a| a.weight).collect();
        combine(&refs, &weights)
    }
}
