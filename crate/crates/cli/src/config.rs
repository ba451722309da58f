//! The declarative run-configuration document (TOML). Unknown keys are
//! rejected so a typo never silently falls back to a default.

use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Deserialize;

use osd_core::evalharness::{BacktestConfig, ForecasterSpec};
use osd_core::stopnet::StopNetConfig;
use osd_core::timing::CostSpec;
use osd_core::{CoreError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable overriding the config seed.
pub const SEED_ENV_VAR: &str = "OSD_SEED";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub forecaster: Option<ForecasterConfig>,
    pub generate: Option<GenerateSection>,
    #[serde(default)]
    pub stopnet: StopNetSection,
    pub backtest: Option<BacktestSection>,
    pub cost: Option<CostSection>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForecasterConfig {
    Gbm {
        s0: Option<f64>,
        mu: f64,
        sigma: f64,
    },
    Ar {
        order: usize,
    },
    Bootstrap {
        block_len: usize,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub n_paths: i64,
    pub horizon: i64,
    /// Required for the ar and bootstrap forecasters.
    pub history_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopNetSection {
    pub hidden_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub input_features: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for StopNetSection {
    fn default() -> Self {
        let d = StopNetConfig::default();
        StopNetSection {
            hidden_dim: d.hidden_dim,
            mlp_hidden: d.mlp_hidden,
            input_features: d.input_features,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
        }
    }
}

impl StopNetSection {
    pub fn to_core(&self, seed: u64) -> StopNetConfig {
        StopNetConfig {
            hidden_dim: self.hidden_dim,
            mlp_hidden: self.mlp_hidden.clone(),
            input_features: self.input_features,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    pub history_file: PathBuf,
    pub train_start: String,
    pub train_end: String,
    /// Explicit decision dates, or a [decision_start, decision_end] range
    /// resolved against the dates present in the history.
    pub decision_dates: Option<Vec<String>>,
    pub decision_start: Option<String>,
    pub decision_end: Option<String>,
    pub horizon: i64,
    pub n_paths: i64,
    #[serde(default)]
    pub fit_once: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub weights: Vec<f64>,
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::from_str(s)
        .map_err(|e| CoreError::invalid(format!("bad date `{s}`: {e} (expected ISO-8601)")))
}

fn positive(name: &str, v: i64) -> Result<usize> {
    if v < 1 {
        return Err(CoreError::invalid(format!("{name} must be >= 1, got {v}")));
    }
    Ok(v as usize)
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CoreError::invalid(format!("config schema error: {e}")))?;
        if config.version != CONFIG_VERSION {
            return Err(CoreError::invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
            config.seed = raw.parse().map_err(|_| {
                CoreError::invalid(format!("{SEED_ENV_VAR} must be an unsigned integer"))
            })?;
        }
        Ok(config)
    }

    pub fn cost_spec(&self, n_series: usize) -> Result<CostSpec> {
        let spec = match &self.cost {
            Some(c) => CostSpec {
                weights: c.weights.clone(),
            },
            None => CostSpec::uniform(n_series),
        };
        spec.validate(n_series)?;
        Ok(spec)
    }

    pub fn forecaster_spec(&self) -> Result<ForecasterSpec> {
        match self.forecaster.as_ref() {
            Some(ForecasterConfig::Ar { order }) => Ok(ForecasterSpec::Ar { order: *order }),
            Some(ForecasterConfig::Bootstrap { block_len }) => Ok(ForecasterSpec::Bootstrap {
                block_len: *block_len,
            }),
            Some(ForecasterConfig::Gbm { .. }) => Ok(ForecasterSpec::Gbm),
            None => Err(CoreError::invalid("config has no [forecaster] section")),
        }
    }

    pub fn backtest_config(
        &self,
        history_dates: &[NaiveDate],
    ) -> Result<(BacktestConfig, PathBuf)> {
        let section = self
            .backtest
            .as_ref()
            .ok_or_else(|| CoreError::invalid("config has no [backtest] section"))?;
        let train_start = parse_date(&section.train_start)?;
        let train_end = parse_date(&section.train_end)?;
        let decision_dates = match (&section.decision_dates, &section.decision_start) {
            (Some(list), _) => list
                .iter()
                .map(|s| parse_date(s))
                .collect::<Result<Vec<_>>>()?,
            (None, Some(start)) => {
                let start = parse_date(start)?;
                let end = parse_date(
                    section
                        .decision_end
                        .as_deref()
                        .ok_or_else(|| CoreError::invalid("decision_end missing"))?,
                )?;
                history_dates
                    .iter()
                    .copied()
                    .filter(|d| *d >= start && *d <= end)
                    .collect()
            }
            (None, None) => {
                return Err(CoreError::invalid(
                    "backtest needs decision_dates or decision_start/decision_end",
                ))
            }
        };
        if decision_dates.is_empty() {
            return Err(CoreError::invalid("no decision dates in range"));
        }
        let config = BacktestConfig {
            train_start,
            train_end,
            decision_dates,
            horizon: positive("horizon", section.horizon)?,
            n_paths: positive("n_paths", section.n_paths)?,
            forecaster: self.forecaster_spec()?,
            stopnet: self.stopnet.to_core(self.seed),
            cost: self.cost.as_ref().map(|c| CostSpec {
                weights: c.weights.clone(),
            }),
            fit_once: section.fit_once,
            seed: self.seed,
        };
        config.validate()?;
        Ok((config, section.history_file.clone()))
    }
}
