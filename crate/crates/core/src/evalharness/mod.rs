//! Baseline strategy, accuracy metric, significance testing, and the
//! rolling-window backtest.

mod stats;

pub use stats::{incomplete_beta, ln_gamma, paired_t_test, student_t_sf, TTestResult};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pathgen::{
    bootstrap_paths, fit_ar, normalize_to_unit, sample_ar_paths, simulate_gbm, DatedSeries,
    GbmParams, PathSet, SeriesHistory,
};
use crate::stopnet::{self, StopNetConfig};
use crate::timing::{decide, CostSpec};

/// Which path generator backs the backtest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ForecasterSpec {
    /// AR(p) on log-values, OLS-fitted.
    Ar { order: usize },
    /// Circular block bootstrap of log-returns.
    Bootstrap { block_len: usize },
    /// GBM with drift and volatility estimated from historical log-returns.
    Gbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub decision_dates: Vec<NaiveDate>,
    pub horizon: usize,
    pub n_paths: usize,
    pub forecaster: ForecasterSpec,
    pub stopnet: StopNetConfig,
    pub cost: Option<CostSpec>,
    /// Fit the forecaster once on the training window instead of refitting
    /// at every decision date.
    pub fit_once: bool,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(CoreError::invalid("horizon must be >= 1"));
        }
        if self.n_paths == 0 {
            return Err(CoreError::invalid("n_paths must be >= 1"));
        }
        if self.train_end < self.train_start {
            return Err(CoreError::invalid("train_end before train_start"));
        }
        if let Some(d) = self.decision_dates.iter().find(|d| **d <= self.train_end) {
            return Err(CoreError::invalid(format!(
                "decision date {d} is not after the train window end {}",
                self.train_end
            )));
        }
        self.stopnet.validate()
    }
}

/// One scored decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRow {
    pub date: NaiveDate,
    pub series_id: String,
    pub baseline_step: usize,
    pub osd_step: usize,
    pub actual_step: usize,
    pub baseline_accuracy: f64,
    pub osd_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub rows: usize,
    pub baseline_accuracy: f64,
    pub osd_accuracy: f64,
    /// mean(osd accuracy - baseline accuracy), exactly over rows.
    pub advantage: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub rows: Vec<BacktestRow>,
    pub summary: BacktestSummary,
    /// (date, series) windows skipped for missing data.
    pub skipped: Vec<String>,
}

/// Step with the lowest per-step mean across sample paths; ties break to
/// the earliest step.
pub fn baseline_decision(paths: &PathSet, series_index: usize) -> Result<usize> {
    if series_index >= paths.n_series {
        return Err(CoreError::invalid("series index out of range"));
    }
    let means = paths.step_means(series_index);
    let mut best = 0;
    for (t, &m) in means.iter().enumerate() {
        if m < means[best] {
            best = t;
        }
    }
    Ok(best + 1)
}

/// 1 - MAPE of the chosen step against the realized minimum:
/// `1 - |X(step) - min_t X(t)| / min_t X(t)`.
pub fn accuracy(actual_future: &[f64], step: usize) -> Result<f64> {
    if step == 0 || step > actual_future.len() {
        return Err(CoreError::invalid(format!(
            "step {step} outside 1..={}",
            actual_future.len()
        )));
    }
    let min = actual_future.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(1.0 - (actual_future[step - 1] - min).abs() / min)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn derive_seed(master: u64, window: usize, series: usize) -> u64 {
    splitmix64(master ^ splitmix64(window as u64).wrapping_add(splitmix64(!(series as u64))))
}

fn generate_paths(
    spec: &ForecasterSpec,
    fit_history: &SeriesHistory,
    sample_history: &SeriesHistory,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<PathSet> {
    match spec {
        ForecasterSpec::Ar { order } => {
            let model = fit_ar(fit_history, *order)?;
            sample_ar_paths(&model, sample_history, n_paths, horizon, seed)
        }
        ForecasterSpec::Bootstrap { block_len } => {
            bootstrap_paths(sample_history, *block_len, n_paths, horizon, seed)
        }
        ForecasterSpec::Gbm => {
            let vals = fit_history.values();
            let rets: Vec<f64> = vals.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
            if rets.len() < 2 {
                return Err(CoreError::invalid("need at least 3 observations for GBM fit"));
            }
            let mean = rets.iter().sum::<f64>() / rets.len() as f64;
            let var = rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                / (rets.len() - 1) as f64;
            let sigma = var.sqrt();
            let params = GbmParams {
                s0: sample_history.last_value(),
                mu: mean + 0.5 * var,
                sigma,
            };
            simulate_gbm(&params, n_paths, horizon, seed)
        }
    }
}

/// Run the full rolling evaluation: per decision date and series, generate
/// paths, score the baseline and the trained stopping network against the
/// realized future window, and aggregate.
pub fn run_backtest(config: &BacktestConfig, series: &[DatedSeries]) -> Result<BacktestReport> {
    config.validate()?;
    if series.is_empty() {
        return Err(CoreError::invalid("no series supplied"));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (w, &date) in config.decision_dates.iter().enumerate() {
        for (i, s) in series.iter().enumerate() {
            let history = match s.history_until(date) {
                Ok(h) => h,
                Err(_) => {
                    skipped.push(format!("{date}/{}: no history", s.series_id));
                    continue;
                }
            };
            if history.len() < 3 {
                skipped.push(format!("{date}/{}: history too short", s.series_id));
                continue;
            }
            let future = match s.future_window(date, config.horizon) {
                Some(f) => f,
                None => {
                    skipped.push(format!(
                        "{date}/{}: future window not covered",
                        s.series_id
                    ));
                    continue;
                }
            };
            let fit_history = if config.fit_once {
                match s.history_until(config.train_end) {
                    Ok(h) => h,
                    Err(_) => {
                        skipped.push(format!(
                            "{date}/{}: no training-window history",
                            s.series_id
                        ));
                        continue;
                    }
                }
            } else {
                history.clone()
            };
            let seed = derive_seed(config.seed, w, i);
            let paths = match generate_paths(
                &config.forecaster,
                &fit_history,
                &history,
                config.n_paths,
                config.horizon,
                seed,
            ) {
                Ok(p) => p,
                Err(e) => {
                    skipped.push(format!("{date}/{}: {e}", s.series_id));
                    continue;
                }
            };
            let (_, norm_paths, _) = normalize_to_unit(&history, &paths)?;
            let baseline_step = baseline_decision(&norm_paths, 0)?;

            let mut net_config = config.stopnet.clone();
            net_config.seed = seed;
            net_config.batch_size = net_config.batch_size.min(config.n_paths);
            let (params, _) = stopnet::train(&net_config, &norm_paths, 0)?;
            let cost = CostSpec::uniform(1);
            let report = decide(&[params], &norm_paths, &cost, "osd", seed)?;
            let osd_step = report.series[0].tau_star;

            let mut actual_step = 1;
            for (t, &v) in future.iter().enumerate() {
                if v < future[actual_step - 1] {
                    actual_step = t + 1;
                }
            }
            rows.push(BacktestRow {
                date,
                series_id: s.series_id.clone(),
                baseline_step,
                osd_step,
                actual_step,
                baseline_accuracy: accuracy(&future, baseline_step)?,
                osd_accuracy: accuracy(&future, osd_step)?,
            });
        }
    }
    let summary = summarize(&rows)?;
    Ok(BacktestReport {
        rows,
        summary,
        skipped,
    })
}

pub fn summarize(rows: &[BacktestRow]) -> Result<BacktestSummary> {
    if rows.is_empty() {
        return Err(CoreError::invalid("backtest produced no rows"));
    }
    let n = rows.len() as f64;
    let baseline = rows.iter().map(|r| r.baseline_accuracy).sum::<f64>() / n;
    let osd = rows.iter().map(|r| r.osd_accuracy).sum::<f64>() / n;
    let diffs: Vec<f64> = rows
        .iter()
        .map(|r| r.osd_accuracy - r.baseline_accuracy)
        .collect();
    let advantage = diffs.iter().sum::<f64>() / n;
    let (t_stat, p_value, degenerate) = if rows.len() >= 2 {
        let t = paired_t_test(&diffs)?;
        (t.t_stat, t.p_value, t.degenerate)
    } else {
        (f64::NAN, f64::NAN, true)
    };
    Ok(BacktestSummary {
        rows: rows.len(),
        baseline_accuracy: baseline,
        osd_accuracy: osd,
        advantage,
        t_stat,
        p_value,
        degenerate,
    })
}
