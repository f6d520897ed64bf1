//! Run configuration: one JSON document, every field optional.

use std::path::{Path, PathBuf};

use alphamine_agent::net::NetConfig;
use alphamine_agent::ppo::PpoConfig;
use alphamine_core::backtest::BacktestConfig;
use alphamine_core::dsl::Expression;
use alphamine_core::env::EnvConfig;
use alphamine_core::panel::{load_csv, DayRange, PanelData, TargetSpec};
use alphamine_core::pool::GdConfig;
use alphamine_core::synth::{default_planted, synth_generate};
use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives synthetic data (unless the synth block sets its own), weight
    /// initialization and the agent.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    /// Forward-return horizon used when a CSV has no target column.
    pub horizon: usize,
    pub splits: Splits,
    pub capacity: usize,
    pub env: EnvConfig,
    pub gd: GdConfig,
    pub net: NetSettings,
    /// `ppo.seed` is always replaced by the top-level seed.
    pub ppo: PpoConfig,
    pub backtest: BacktestConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSource::Synth(SynthSpec::default()),
            horizon: TargetSpec::default().horizon,
            splits: Splits::default(),
            capacity: 10,
            env: EnvConfig::default(),
            gd: GdConfig::default(),
            net: NetSettings::default(),
            ppo: PpoConfig::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Panel CSV; relative paths resolve against the config file's folder.
    Path(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub days: usize,
    pub noise_sigma: f64,
    pub planted: Vec<PlantedAlpha>,
    pub seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 50,
            days: 750,
            noise_sigma: 1.0,
            planted: default_planted()
                .into_iter()
                .map(|(e, weight)| PlantedAlpha {
                    expression: e.to_infix_string(),
                    weight,
                })
                .collect(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedAlpha {
    pub expression: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub dropout: f64,
}

impl Default for NetSettings {
    fn default() -> Self {
        let s = NetConfig::standard(0);
        Self {
            embed_dim: s.embed_dim,
            hidden: s.hidden,
            layers: s.layers,
            head_hidden: s.head_hidden,
            dropout: s.dropout,
        }
    }
}

impl NetSettings {
    pub fn for_vocab(&self, vocab_size: usize) -> NetConfig {
        NetConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            layers: self.layers,
            head_hidden: self.head_hidden,
            dropout: self.dropout,
        }
    }
}

/// Either consecutive day counts from the first day, or inclusive date spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Splits {
    Days {
        train_days: usize,
        valid_days: usize,
        test_days: usize,
    },
    Dates {
        train: DateSpan,
        valid: DateSpan,
        test: DateSpan,
    },
}

impl Default for Splits {
    fn default() -> Self {
        Splits::Days {
            train_days: 500,
            valid_days: 120,
            test_days: 130,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateSpan {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (train, valid, test)")),
        }
    }
}

/// Resolved split ranges, in order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRanges {
    pub train: DayRange,
    pub valid: DayRange,
    pub test: DayRange,
}

impl SplitRanges {
    pub fn get(&self, split: Split) -> DayRange {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative data paths are rebased onto its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let DataSource::Path(p) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn synth_seed(&self) -> u64 {
        match &self.data {
            DataSource::Synth(s) => s.seed.unwrap_or(self.seed),
            DataSource::Path(_) => self.seed,
        }
    }

    /// PPO settings with the run seed applied.
    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            seed: self.seed,
            ..self.ppo
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            bail!("capacity must be at least 1");
        }
        if self.horizon == 0 {
            bail!("horizon must be at least 1");
        }
        if !(self.env.min_valid_fraction > 0.0 && self.env.min_valid_fraction <= 1.0) {
            bail!("env.min_valid_fraction must lie in (0, 1]");
        }
        if self.env.max_tokens < 3 {
            bail!("env.max_tokens must be at least 3");
        }
        if self.gd.steps == 0 || self.gd.learning_rate <= 0.0 {
            bail!("gd.steps and gd.learning_rate must be positive");
        }
        if let DataSource::Synth(s) = &self.data {
            parse_planted(&s.planted)?;
        }
        self.ppo().validate()?;
        Ok(())
    }

    pub fn load_panel(&self) -> Result<PanelData> {
        match &self.data {
            DataSource::Path(p) => load_csv(p, TargetSpec { horizon: self.horizon })
                .with_context(|| format!("loading panel {}", p.display())),
            DataSource::Synth(s) => {
                let planted = parse_planted(&s.planted)?;
                synth_generate(self.synth_seed(), s.n, s.days, &planted, s.noise_sigma)
                    .context("generating synthetic panel")
            }
        }
    }

    pub fn split_ranges(&self, panel: &PanelData) -> Result<SplitRanges> {
        let days = panel.n_days();
        let ranges = match &self.splits {
            Splits::Days {
                train_days,
                valid_days,
                test_days,
            } => {
                let counts = [*train_days, *valid_days, *test_days];
                if counts.contains(&0) {
                    bail!("every split needs at least one day");
                }
                let total: usize = counts.iter().sum();
                if total > days {
                    bail!("splits need {total} days but the panel has {days}");
                }
                let train = DayRange::new(0, train_days - 1);
                let valid = DayRange::new(train.end + 1, train.end + valid_days);
                let test = DayRange::new(valid.end + 1, valid.end + test_days);
                SplitRanges { train, valid, test }
            }
            Splits::Dates { train, valid, test } => {
                let resolve = |name: &str, span: &DateSpan| -> Result<DayRange> {
                    if span.from > span.to {
                        bail!("{name} split starts after it ends");
                    }
                    panel
                        .range_between(span.from, span.to)
                        .with_context(|| format!("{name} split {}..{} has no trading days", span.from, span.to))
                };
                SplitRanges {
                    train: resolve("train", train)?,
                    valid: resolve("valid", valid)?,
                    test: resolve("test", test)?,
                }
            }
        };
        if !(ranges.train.end < ranges.valid.start && ranges.valid.end < ranges.test.start) {
            bail!("splits must be disjoint and ordered train < valid < test");
        }
        Ok(ranges)
    }
}

pub fn parse_planted(planted: &[PlantedAlpha]) -> Result<Vec<(Expression, f64)>> {
    planted
        .iter()
        .map(|p| {
            let e = Expression::parse_infix(&p.expression)
                .with_context(|| format!("invalid planted expression `{}`", p.expression))?;
            if !p.weight.is_finite() {
                bail!("planted weight for `{}` is not finite", p.expression);
            }
            Ok((e, p.weight))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.backtest.k, 50);
        assert_eq!(cfg.backtest.n, 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn both_split_forms_parse() {
        let days: Splits = serde_json::from_str(r#"{"train_days":5,"valid_days":2,"test_days":3}"#).unwrap();
        assert!(matches!(days, Splits::Days { train_days: 5, .. }));
        let dates: Splits = serde_json::from_str(
            r#"{"train":{"from":"2015-01-05","to":"2015-03-01"},
                "valid":{"from":"2015-03-02","to":"2015-04-01"},
                "test":{"from":"2015-04-02","to":"2015-05-01"}}"#,
        )
        .unwrap();
        assert!(matches!(dates, Splits::Dates { .. }));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"capacty": 3}"#).is_err());
    }

    #[test]
    fn overlapping_or_oversized_splits_fail() {
        let cfg = RunConfig {
            data: DataSource::Synth(SynthSpec {
                n: 5,
                days: 100,
                ..SynthSpec::default()
            }),
            splits: Splits::Days {
                train_days: 80,
                valid_days: 10,
                test_days: 20,
            },
            ..RunConfig::default()
        };
        let panel = cfg.load_panel().unwrap();
        assert!(cfg.split_ranges(&panel).is_err());

        let dates = |a: &str, b: &str| DateSpan {
            from: a.parse().unwrap(),
            to: b.parse().unwrap(),
        };
        let overlapping = RunConfig {
            splits: Splits::Dates {
                train: dates("2015-01-05", "2015-02-10"),
                valid: dates("2015-02-01", "2015-02-20"),
                test: dates("2015-02-23", "2015-03-20"),
            },
            ..cfg
        };
        assert!(overlapping.split_ranges(&panel).is_err());
    }

    #[test]
    fn bad_planted_expression_names_the_problem() {
        let planted = vec![PlantedAlpha {
            expression: "Mean($close".into(),
            weight: 1.0,
        }];
        let err = parse_planted(&planted).unwrap_err();
        assert!(format!("{err:#}").contains("Mean($close"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn day_splits_are_ordered_or_rejected(train in 0usize..40, valid in 0usize..40, test in 0usize..40) {
            let panel = synth_generate(1, 3, 80, &[], 0.0).unwrap();
            let cfg = RunConfig {
                splits: Splits::Days { train_days: train, valid_days: valid, test_days: test },
                ..RunConfig::default()
            };
            match cfg.split_ranges(&panel) {
                Ok(r) => {
                    proptest::prop_assert!(train + valid + test <= 80 && train.min(valid).min(test) > 0);
                    proptest::prop_assert_eq!((r.train.len(), r.valid.len(), r.test.len()), (train, valid, test));
                    proptest::prop_assert_eq!(r.train.start, 0);
                    proptest::prop_assert_eq!(r.valid.start, r.train.end + 1);
                    proptest::prop_assert_eq!(r.test.start, r.valid.end + 1);
                }
                Err(_) => proptest::prop_assert!(train + valid + test > 80 || train.min(valid).min(test) == 0),
            }
        }
    }
}
