//! Hard stopping times, mode aggregation, and decision costs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pathgen::PathSet;
use crate::stopnet::{compute_stop_weights, NetworkParams, StopWeights};

/// Units to purchase per series; the cost is `sum_i a_i X_i(tau_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub weights: Vec<f64>,
}

impl CostSpec {
    pub fn uniform(n_series: usize) -> Self {
        CostSpec {
            weights: vec![1.0; n_series],
        }
    }

    pub fn validate(&self, n_series: usize) -> Result<()> {
        if self.weights.len() != n_series {
            return Err(CoreError::invalid(format!(
                "cost spec has {} weights for {} series",
                self.weights.len(),
                n_series
            )));
        }
        if self.weights.iter().any(|&a| !(a > 0.0)) {
            return Err(CoreError::invalid("all cost weights must be positive"));
        }
        Ok(())
    }
}

/// Per-series decision summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDecision {
    pub series_id: String,
    /// Hard stop per path, each in 1..=T.
    pub stops: Vec<usize>,
    /// step -> count, ordered by step.
    pub histogram: BTreeMap<usize, usize>,
    /// Mode of the hard stops, offset from t0 in 1..=T.
    pub tau_star: usize,
}

/// The aggregated decision across all series of a path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub series: Vec<SeriesDecision>,
    pub expected_cost: f64,
    pub t0: i64,
    pub method: String,
    pub seed: u64,
}

/// First step where the accumulated mass crosses the remaining mass:
/// the smallest t with `sum_{s<=t} d_s >= 1 - d_t`. Always defined, since
/// at t = T the left side is 1.
pub fn hard_stop(d: &[f64]) -> Result<usize> {
    if d.is_empty() {
        return Err(CoreError::invalid("empty stopping weights"));
    }
    let mut cum = 0.0;
    for (t, &dt) in d.iter().enumerate() {
        cum += dt;
        if cum >= 1.0 - dt {
            return Ok(t + 1);
        }
    }
    // Accumulation error can leave cum fractionally below 1 - d_T; the
    // terminal clause of the rule still applies.
    Ok(d.len())
}

/// Mode of the per-path hard stops; ties break to the earliest step.
pub fn aggregate_mode(stops: &[usize]) -> Result<(usize, BTreeMap<usize, usize>)> {
    if stops.is_empty() {
        return Err(CoreError::invalid("need at least one stop"));
    }
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in stops {
        *histogram.entry(s).or_insert(0) += 1;
    }
    let tau_star = histogram
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&step, _)| step)
        .unwrap();
    Ok((tau_star, histogram))
}

/// Total soft cost `sum_i a_i * (1/J) sum_j sum_t D_{i,t}^j X_i^j(t)`.
pub fn expected_cost(
    weights: &[StopWeights],
    paths: &PathSet,
    cost: &CostSpec,
) -> Result<f64> {
    cost.validate(paths.n_series)?;
    if weights.len() != paths.n_series {
        return Err(CoreError::invalid(format!(
            "got stop weights for {} series, path set has {}",
            weights.len(),
            paths.n_series
        )));
    }
    let mut total = 0.0;
    for (i, sw) in weights.iter().enumerate() {
        if sw.d.len() != paths.n_paths {
            return Err(CoreError::invalid("stop weights path count mismatch"));
        }
        let mut series_cost = 0.0;
        for (j, d) in sw.d.iter().enumerate() {
            if d.len() != paths.horizon {
                return Err(CoreError::invalid("stop weights horizon mismatch"));
            }
            let prices = paths.path_slice(j, i);
            series_cost += d.iter().zip(prices).map(|(a, b)| a * b).sum::<f64>();
        }
        total += cost.weights[i] * series_cost / paths.n_paths as f64;
    }
    Ok(total)
}

/// Full decision pipeline: forward pass, soft weights, per-path hard
/// stops, mode aggregation, and expected cost.
pub fn decide(
    models: &[NetworkParams],
    paths: &PathSet,
    cost: &CostSpec,
    method: impl Into<String>,
    seed: u64,
) -> Result<DecisionReport> {
    if models.len() != paths.n_series {
        return Err(CoreError::invalid(format!(
            "got {} models for {} series",
            models.len(),
            paths.n_series
        )));
    }
    cost.validate(paths.n_series)?;
    let mut all_weights = Vec::with_capacity(paths.n_series);
    let mut series = Vec::with_capacity(paths.n_series);
    for (i, params) in models.iter().enumerate() {
        let sw = compute_stop_weights(params, paths, i)?;
        let stops: Vec<usize> = sw
            .d
            .iter()
            .map(|d| hard_stop(d))
            .collect::<Result<_>>()?;
        let (tau_star, histogram) = aggregate_mode(&stops)?;
        series.push(SeriesDecision {
            series_id: paths.series_ids[i].clone(),
            stops,
            histogram,
            tau_star,
        });
        all_weights.push(sw);
    }
    let expected = expected_cost(&all_weights, paths, cost)?;
    Ok(DecisionReport {
        series,
        expected_cost: expected,
        t0: paths.t0,
        method: method.into(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathgen::Provenance;
    use crate::stopnet::{init_network, StopNetConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hard_stop_hand_cases() {
        assert_eq!(hard_stop(&[0.5, 0.25, 0.25]).unwrap(), 1);
        assert_eq!(hard_stop(&[0.1, 0.2, 0.7]).unwrap(), 3);
        assert_eq!(hard_stop(&[0.4, 0.4, 0.2]).unwrap(), 2);
    }

    #[test]
    fn hard_stop_one_hot_returns_that_step() {
        for t in 0..4 {
            let mut d = vec![0.0; 4];
            d[t] = 1.0;
            assert_eq!(hard_stop(&d).unwrap(), t + 1);
        }
    }

    #[test]
    fn aggregate_mode_counts_and_breaks_ties_early() {
        let (tau, hist) = aggregate_mode(&[2, 2, 3, 1, 2]).unwrap();
        assert_eq!(tau, 2);
        assert_eq!(hist.get(&1), Some(&1));
        assert_eq!(hist.get(&2), Some(&3));
        assert_eq!(hist.get(&3), Some(&1));
        assert_eq!(hist.values().sum::<usize>(), 5);

        let (tau, _) = aggregate_mode(&[1, 1, 2, 2]).unwrap();
        assert_eq!(tau, 1);
        let (tau, _) = aggregate_mode(&[3, 3, 3]).unwrap();
        assert_eq!(tau, 3);
    }

    fn paths_of(rows: Vec<Vec<Vec<f64>>>) -> PathSet {
        // rows[j][i] is a T-vector.
        let n_paths = rows.len();
        let n_series = rows[0].len();
        let horizon = rows[0][0].len();
        let mut values = Vec::new();
        for row in &rows {
            for s in row {
                values.extend_from_slice(s);
            }
        }
        let ids = (0..n_series).map(|i| format!("s{i}")).collect();
        PathSet::new(n_paths, n_series, horizon, ids, values, 0, Provenance::Imported).unwrap()
    }

    #[test]
    fn expected_cost_scales_linearly_and_adds() {
        // h == 0.5 weights on the loss-example paths give per-series value 2.
        let sw = StopWeights {
            d: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            h: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        let ps = paths_of(vec![vec![vec![1.0, 3.0]], vec![vec![3.0, 1.0]]]);
        let c1 =
            expected_cost(std::slice::from_ref(&sw), &ps, &CostSpec { weights: vec![2.0] })
                .unwrap();
        assert_abs_diff_eq!(c1, 4.0, epsilon = 1e-12);

        // Two independent series: values add.
        let ps2 = paths_of(vec![
            vec![vec![1.0, 3.0], vec![1.0, 3.0]],
            vec![vec![3.0, 1.0], vec![3.0, 1.0]],
        ]);
        let c2 =
            expected_cost(&[sw.clone(), sw], &ps2, &CostSpec::uniform(2)).unwrap();
        assert_abs_diff_eq!(c2, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_one_hot_weights_average_that_step() {
        let d = vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]];
        let sw = StopWeights { h: d.clone(), d };
        let ps = paths_of(vec![vec![vec![1.0, 2.0, 3.0]], vec![vec![1.0, 4.0, 3.0]]]);
        let c = expected_cost(&[sw], &ps, &CostSpec::uniform(1)).unwrap();
        assert_abs_diff_eq!(c, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn expected_cost_rejects_dimension_mismatch() {
        let sw = StopWeights {
            d: vec![vec![1.0]],
            h: vec![vec![0.5]],
        };
        let ps = paths_of(vec![vec![vec![1.0], vec![1.0]]]);
        assert!(expected_cost(&[sw], &ps, &CostSpec::uniform(2)).is_err());
    }

    #[test]
    fn decide_on_constant_paths_costs_sum_of_weights() {
        let cfg = StopNetConfig {
            hidden_dim: 4,
            mlp_hidden: vec![4],
            ..Default::default()
        };
        let models = vec![init_network(&cfg).unwrap(), init_network(&cfg).unwrap()];
        let ps = paths_of(vec![
            vec![vec![1.0; 4], vec![1.0; 4]],
            vec![vec![1.0; 4], vec![1.0; 4]],
        ]);
        let report = decide(&models, &ps, &CostSpec::uniform(2), "test", 0).unwrap();
        assert_abs_diff_eq!(report.expected_cost, 2.0, epsilon = 1e-9);
        for s in &report.series {
            assert_eq!(s.histogram.values().sum::<usize>(), 2);
        }
    }

    proptest! {
        #[test]
        fn hard_stop_total_on_soft_weight_outputs(
            h in proptest::collection::vec(1e-6..=(1.0 - 1e-6), 1..30)
        ) {
            let d = crate::stopnet::soft_weights(&h).unwrap();
            let t = hard_stop(&d).unwrap();
            prop_assert!((1..=d.len()).contains(&t));
        }

        #[test]
        fn mode_attains_max_count(stops in proptest::collection::vec(1usize..10, 1..200)) {
            let (tau, hist) = aggregate_mode(&stops).unwrap();
            let max = hist.values().max().unwrap();
            prop_assert_eq!(hist[&tau], *max);
            prop_assert_eq!(hist.values().sum::<usize>(), stops.len());
        }
    }
}
