mod common;

use alphamine_core::dsl::Expression;
use alphamine_core::eval::AlphaMatrix;
use alphamine_core::panel::DayRange;
use alphamine_core::pool::{AlphaPool, GdConfig, PoolCheckpoint};
use alphamine_core::synth::{default_planted, synth_generate};
use common::direct_mse;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 8] = [
    "$open",
    "$close",
    "$high",
    "$low",
    "$volume",
    "$vwap",
    "Abs($open)",
    "Abs($close)",
];

struct Instance {
    pool: AlphaPool,
    alphas: Vec<Vec<Vec<f64>>>,
    target: Vec<Vec<f64>>,
}

fn instance(seed: u64, n: usize, t: usize, k: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    };
    let target = grid(&mut rng);
    let flat = |g: &Vec<Vec<f64>>| AlphaMatrix::new(DayRange::new(0, t - 1), n, g.concat());
    let mut pool = AlphaPool::new(&flat(&target), k, GdConfig::default());
    let mut alphas = Vec::new();
    for name in NAMES.iter().take(k) {
        let g = grid(&mut rng);
        pool.add_alpha(Expression::parse_infix(name).unwrap(), &flat(&g), &mut rng)
            .unwrap();
        alphas.push(g);
    }
    Instance { pool, alphas, target }
}

#[test]
fn cached_loss_equals_direct_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..100 {
        let (n, t, k) = (
            rng.random_range(3..=20),
            rng.random_range(1..=10),
            rng.random_range(1..=5),
        );
        let inst = instance(seed, n, t, k);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cached = inst.pool.loss(&w).unwrap();
        let direct = direct_mse(&inst.alphas, &w, &inst.target);
        assert!(
            (cached - direct).abs() <= 1e-10 * direct.abs().max(1e-300),
            "{cached} vs {direct}"
        );
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..50 {
        let k = rng.random_range(1..=5);
        let inst = instance(100 + seed, rng.random_range(3..=20), rng.random_range(2..=10), k);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = inst.pool.loss_gradient(&w).unwrap();
        let h = 1e-5;
        for i in 0..k {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (inst.pool.loss(&up).unwrap() - inst.pool.loss(&down).unwrap()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-12);
            assert!(rel <= 1e-6, "component {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn checkpoint_restore_is_bit_exact() {
    let panel = synth_generate(4, 12, 160, &default_planted(), 1.0).unwrap();
    let range = DayRange::new(0, 99);
    let mut pool = AlphaPool::for_panel(&panel, range, 3, GdConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for text in [
        "Mean($close,10)",
        "Div($volume,Mean($volume,20))",
        "Std($vwap,20)",
        "Delta($open,10)",
    ] {
        let e = Expression::parse_infix(text).unwrap();
        let m = alphamine_core::eval::evaluate(&e, &panel, range);
        pool.add_alpha(e, &m, &mut rng).unwrap();
    }
    assert_eq!(pool.len(), 3);
    let text = serde_json::to_string_pretty(&pool.to_checkpoint()).unwrap();
    let ckpt: PoolCheckpoint = serde_json::from_str(&text).unwrap();
    let back = AlphaPool::restore(&ckpt, &panel, range, GdConfig::default()).unwrap();
    assert_eq!(back.objective().to_bits(), pool.objective().to_bits());
    assert_eq!(
        back.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
        pool.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>()
    );
    let signal = ckpt.combined_signal(&panel, range, 0.8).unwrap();
    let direct = pool.combined_matrix().unwrap();
    assert_eq!(
        signal.values().iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
        direct.values().iter().map(|w| w.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn unevaluable_alphas_are_listed() {
    let panel = synth_generate(4, 12, 160, &default_planted(), 1.0).unwrap();
    let ckpt = PoolCheckpoint {
        version: 1,
        capacity: 2,
        objective: 0.0,
        alphas: vec![alphamine_core::pool::CheckpointAlpha {
            expression: "Log(Sub($close,$close))".into(),
            weight: 1.0,
        }],
    };
    let err = ckpt.combined_signal(&panel, panel.full_range(), 0.8).unwrap_err();
    assert!(err.to_string().contains("Log(Sub($close,$close))"));
}

/// Per-day mean-zero unit-length rescaling of the present cells, zero on
/// missing cells; `None` when fewer than two distinct values are present.
fn zero_filled_unit(day: &[f64]) -> Option<Vec<f64>> {
    let present: Vec<f64> = day.iter().copied().filter(|v| !v.is_nan()).collect();
    if present.len() < 2 || present.iter().all(|&v| v == present[0]) {
        return None;
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    let norm = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    Some(
        day.iter()
            .map(|&v| if v.is_nan() { 0.0 } else { (v - mean) / norm })
            .collect(),
    )
}

fn direct_mse_with_gaps(alphas: &[Vec<Vec<f64>>], weights: &[f64], target: &[Vec<f64>]) -> f64 {
    let n = target[0].len();
    let (mut total, mut days) = (0.0, 0usize);
    for (d, y) in target.iter().enumerate() {
        let Some(y) = zero_filled_unit(y) else { continue };
        days += 1;
        let mut z = vec![0.0; n];
        for (a, w) in alphas.iter().zip(weights) {
            if let Some(f) = zero_filled_unit(&a[d]) {
                z.iter_mut().zip(&f).for_each(|(zi, fi)| *zi += w * fi);
            }
        }
        total += z.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    }
    total / days as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn missing_cells_keep_the_loss_a_true_squared_error(seed in 0u64..10_000, k in 1usize..=6) {
        let (n, t) = (8, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..t)
                .map(|_| {
                    let blank = rng.random_bool(0.15);
                    (0..n)
                        .map(|_| if blank || rng.random_bool(0.3) { f64::NAN } else { rng.random_range(-2.0..2.0) })
                        .collect()
                })
                .collect()
        };
        let target = grid(&mut rng);
        prop_assume!(target.iter().any(|d| zero_filled_unit(d).is_some()));
        let flat = |g: &Vec<Vec<f64>>| AlphaMatrix::new(DayRange::new(0, t - 1), n, g.concat());
        let mut pool = AlphaPool::new(&flat(&target), k, GdConfig::default());
        let mut alphas = Vec::new();
        for name in NAMES.iter().take(k) {
            let g = grid(&mut rng);
            if pool.add_alpha(Expression::parse_infix(name).unwrap(), &flat(&g), &mut rng).is_ok() {
                alphas.push(g);
            }
        }
        prop_assume!(!alphas.is_empty());
        for _ in 0..5 {
            let w: Vec<f64> = (0..alphas.len()).map(|_| rng.random_range(-50.0..50.0)).collect();
            let direct = direct_mse_with_gaps(&alphas, &w, &target);
            let cached = pool.loss(&w).unwrap();
            prop_assert!(cached >= -1e-12);
            prop_assert!((cached - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
        let fitted = pool.optimize_weights(pool.weights()).unwrap();
        prop_assert!(fitted.iter().all(|w| w.is_finite() && w.abs() < 1e6));
    }

    #[test]
    fn refit_never_increases_loss(seed in 0u64..10_000, k in 1usize..=6, scale in 0.0f64..3.0) {
        let inst = instance(seed, 10, 6, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start: Vec<f64> = (0..k).map(|_| rng.random_range(-scale..=scale)).collect();
        let fitted = inst.pool.optimize_weights(&start).unwrap();
        prop_assert!(inst.pool.loss(&fitted).unwrap() <= inst.pool.loss(&start).unwrap() + 1e-15);
    }

    #[test]
    fn adding_never_lowers_the_objective_below_a_zero_weight_newcomer(seed in 0u64..10_000, k in 2usize..=8) {
        let (n, t) = (10, 6);
        let range = DayRange::new(0, t - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = || -> Vec<f64> { (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let target = AlphaMatrix::new(range, n, grid());
        let matrices: Vec<AlphaMatrix> = (0..k).map(|_| AlphaMatrix::new(range, n, grid())).collect();
        let mut pool = AlphaPool::new(&target, 10, GdConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for (name, m) in NAMES.iter().zip(&matrices) {
            let mut zeroed = pool.weights().to_vec();
            pool.add_alpha(Expression::parse_infix(name).unwrap(), m, &mut rng).unwrap();
            if pool.len() > 1 {
                zeroed.push(0.0);
                let mut baseline = pool.clone();
                baseline.set_weights(zeroed).unwrap();
                prop_assert!(pool.objective() >= baseline.objective() - 1e-9);
            }
        }
    }

    #[test]
    fn pool_never_exceeds_capacity(seed in 0u64..10_000, cap in 1usize..=4) {
        let inst = instance(seed, 8, 5, 1);
        let mut pool = AlphaPool::new(inst.pool.target(), cap, GdConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in NAMES {
            let g: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = AlphaMatrix::new(DayRange::new(0, 4), 8, g);
            pool.add_alpha(Expression::parse_infix(name).unwrap(), &m, &mut rng).unwrap();
            prop_assert!(pool.len() <= cap);
            prop_assert!((-1.0..=1.0).contains(&pool.objective()));
        }
    }
}
