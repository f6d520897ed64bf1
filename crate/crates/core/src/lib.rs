//! Formulaic alpha mining primitives: panel data, the formula language and
//! its evaluator, the alpha combination pool, the token-generation
//! environment, and a top-k/drop-n backtester.

pub mod backtest;
pub mod dsl;
pub mod env;
pub mod eval;
pub mod metrics;
pub mod panel;
pub mod pool;
pub mod search;
pub mod synth;
