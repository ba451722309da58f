//! The recurrent soft-stopping network: architecture, the stopping-weight
//! recursion, its loss, exact analytic gradients, and the training loop.
//!
//! For one series, head outputs h_t in (0,1) are turned into soft stopping
//! weights by
//!
//!   D_t = max{h_t, t+1-T} * (1 - sum_{s<t} D_s)
//!
//! so the D_t form a probability distribution over steps: for t < T the max
//! resolves to h_t, and at t = T the max saturates to 1 and D_T absorbs the
//! remaining mass exactly. The training objective is the Monte Carlo
//! average of sum_t D_t * X_t over sample paths.

mod linalg;
mod network;
mod train;

pub use network::{init_network, GruParams, HeadLayer, NetworkParams, HEAD_CLAMP};
pub use train::train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pathgen::PathSet;
use network::{backward, forward_cached};

/// Architecture and training hyperparameters for one stopping network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopNetConfig {
    pub hidden_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub input_features: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for StopNetConfig {
    fn default() -> Self {
        StopNetConfig {
            hidden_dim: 16,
            mlp_hidden: vec![16],
            input_features: 2,
            learning_rate: 0.05,
            batch_size: 256,
            epochs: 200,
            seed: 0,
        }
    }
}

impl StopNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.input_features == 0 {
            return Err(CoreError::invalid("network dimensions must be >= 1"));
        }
        if self.mlp_hidden.iter().any(|&w| w == 0) {
            return Err(CoreError::invalid("mlp_hidden widths must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::invalid("batch_size and epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Soft stopping weights for one series: `d[j][t-1]` per path and step,
/// alongside the raw head outputs `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct StopWeights {
    pub d: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

/// Per-step input features for one price path: normalized price and the
/// scaled time index t/T.
pub fn path_features(prices: &[f64]) -> Vec<Vec<f64>> {
    let horizon = prices.len() as f64;
    prices
        .iter()
        .enumerate()
        .map(|(t, &p)| vec![p, (t + 1) as f64 / horizon])
        .collect()
}

/// Run the network over one path prefix-by-prefix; output t depends only
/// on steps 1..=t.
pub fn forward_h(params: &NetworkParams, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(forward_cached(params, features)?.outputs)
}

/// The stopping-weight recursion.
pub fn soft_weights(h: &[f64]) -> Result<Vec<f64>> {
    let horizon = h.len();
    if horizon == 0 {
        return Err(CoreError::invalid("need at least one step"));
    }
    for (t, &v) in h.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(CoreError::invalid(format!(
                "h[{}] = {v} outside the open interval (0,1)",
                t + 1
            )));
        }
    }
    let mut d = Vec::with_capacity(horizon);
    let mut cum = 0.0;
    for (t, &ht) in h.iter().enumerate() {
        let step = t + 1;
        if step < horizon {
            // The max is provably inactive here: step+1-T <= 0 < h_t.
            debug_assert!((step as f64 + 1.0 - horizon as f64) <= 0.0);
            let dt = ht * (1.0 - cum);
            d.push(dt);
            cum += dt;
        } else {
            // max{h_T, 1} = 1: the last step absorbs the remaining mass.
            d.push(1.0 - cum);
        }
    }
    Ok(d)
}

/// Per-path loss `sum_t D_t X_t` and its exact gradient with respect to
/// each clamped head output.
///
/// For t < T: dL/dh_t = X_t * P_{t-1} - (1/(1-h_t)) * sum_{u>t} D_u X_u
/// where P_{t-1} = prod_{s<t}(1-h_s). The max at t = T saturates to the
/// constant 1, so dL/dh_T = 0 identically.
pub fn loss_and_h_grads(h: &[f64], prices: &[f64]) -> Result<(f64, Vec<f64>)> {
    if h.len() != prices.len() {
        return Err(CoreError::invalid("h and prices must have equal length"));
    }
    let horizon = h.len();
    if horizon == 0 {
        return Err(CoreError::invalid("need at least one step"));
    }
    for (t, &v) in h.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(CoreError::invalid(format!(
                "h[{}] = {v} outside the open interval (0,1)",
                t + 1
            )));
        }
    }
    // G_t: expected cost from step t on, conditional on not having stopped
    // earlier; G_T = X_T, G_t = G_{t+1} + h_t (X_t - G_{t+1}). The loss is
    // G_1 and dL/dh_t = P_{t-1} (X_t - G_{t+1}).
    let mut grads = vec![0.0; horizon];
    let mut g_next = prices[horizon - 1];
    for t in (0..horizon - 1).rev() {
        grads[t] = prices[t] - g_next;
        g_next += h[t] * grads[t];
    }
    let loss = g_next;
    let mut survive = 1.0; // P_{t-1}
    for t in 0..horizon - 1 {
        grads[t] *= survive;
        survive *= 1.0 - h[t];
    }
    // grads[horizon-1] stays 0: the terminal max is saturated.
    Ok((loss, grads))
}

/// Soft weights for every path of one series.
pub fn compute_stop_weights(
    params: &NetworkParams,
    paths: &PathSet,
    series_index: usize,
) -> Result<StopWeights> {
    check_series(paths, series_index)?;
    let mut d = Vec::with_capacity(paths.n_paths);
    let mut h_all = Vec::with_capacity(paths.n_paths);
    for j in 0..paths.n_paths {
        let feats = path_features(paths.path_slice(j, series_index));
        let h = forward_h(params, &feats)?;
        d.push(soft_weights(&h)?);
        h_all.push(h);
    }
    Ok(StopWeights { d, h: h_all })
}

/// Monte Carlo average of `sum_t D_t X_t` across paths of one series.
pub fn loss(params: &NetworkParams, paths: &PathSet, series_index: usize) -> Result<f64> {
    check_series(paths, series_index)?;
    let mut total = 0.0;
    for j in 0..paths.n_paths {
        let prices = paths.path_slice(j, series_index);
        let h = forward_h(params, &path_features(prices))?;
        let (l, _) = loss_and_h_grads(&h, prices)?;
        total += l;
    }
    Ok(total / paths.n_paths as f64)
}

/// Exact reverse-mode gradient of [`loss`] over all paths in `batch`.
pub fn gradient(
    params: &NetworkParams,
    batch: &PathSet,
    series_index: usize,
) -> Result<NetworkParams> {
    let all: Vec<usize> = (0..batch.n_paths).collect();
    gradient_for_paths(params, batch, series_index, &all)
}

pub(crate) fn gradient_for_paths(
    params: &NetworkParams,
    batch: &PathSet,
    series_index: usize,
    path_indices: &[usize],
) -> Result<NetworkParams> {
    check_series(batch, series_index)?;
    if path_indices.is_empty() {
        return Err(CoreError::invalid("gradient batch must be non-empty"));
    }
    let mut grads = params.zeros_like();
    for &j in path_indices {
        let prices = batch.path_slice(j, series_index);
        let cache = forward_cached(params, &path_features(prices))?;
        let (_, d_out) = loss_and_h_grads(&cache.outputs, prices)?;
        backward(params, &cache, &d_out, &mut grads);
    }
    grads.scale(1.0 / path_indices.len() as f64);
    if !grads.is_finite() {
        return Err(CoreError::Numerical(
            "non-finite gradient accumulated over batch".into(),
        ));
    }
    Ok(grads)
}

fn check_series(paths: &PathSet, series_index: usize) -> Result<()> {
    if series_index >= paths.n_series {
        return Err(CoreError::invalid(format!(
            "series index {series_index} out of range (N = {})",
            paths.n_series
        )));
    }
    Ok(())
}

/// Versioned on-disk bundle of one trained network per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub series_ids: Vec<String>,
    pub params: Vec<NetworkParams>,
}

pub const MODEL_VERSION: u32 = 1;

impl ModelBundle {
    pub fn new(series_ids: Vec<String>, params: Vec<NetworkParams>) -> Self {
        ModelBundle {
            version: MODEL_VERSION,
            series_ids,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Numerical(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bundle: ModelBundle = serde_json::from_str(&text).map_err(|e| CoreError::Parse {
            line: e.line(),
            detail: e.to_string(),
        })?;
        if bundle.version != MODEL_VERSION {
            return Err(CoreError::invalid(format!(
                "unsupported model version {}",
                bundle.version
            )));
        }
        if bundle.series_ids.len() != bundle.params.len() {
            return Err(CoreError::invalid(
                "model bundle series/params length mismatch",
            ));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathgen::Provenance;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tiny_config() -> StopNetConfig {
        StopNetConfig {
            hidden_dim: 3,
            mlp_hidden: vec![4],
            input_features: 2,
            seed: 7,
            ..Default::default()
        }
    }

    fn single_series_paths(paths: Vec<Vec<f64>>) -> PathSet {
        let n_paths = paths.len();
        let horizon = paths[0].len();
        let values: Vec<f64> = paths.into_iter().flatten().collect();
        PathSet::new(n_paths, 1, horizon, vec!["s".into()], values, 0, Provenance::Imported)
            .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = tiny_config();
        let a = init_network(&cfg).unwrap();
        let b = init_network(&cfg).unwrap();
        assert_eq!(a, b);
        let bound = 1.0 / (cfg.input_features as f64).sqrt();
        assert!(a.cell.w_update.data.iter().all(|v| v.abs() <= bound));
        assert_eq!(a.cell.w_update.rows, 3);
        assert_eq!(a.cell.w_update.cols, 2);
        assert!(a.cell.b_i_update.iter().all(|&v| v == 0.0));
        let head_bound = 1.0 / (cfg.hidden_dim as f64).sqrt();
        assert!(a.head[0].w.data.iter().all(|v| v.abs() <= head_bound));
    }

    #[test]
    fn forward_is_causal_and_in_unit_interval() {
        let params = init_network(&tiny_config()).unwrap();
        let base = path_features(&[1.0, 0.9, 1.1, 1.05, 0.95]);
        let h0 = forward_h(&params, &base).unwrap();
        assert!(h0.iter().all(|&v| v > 0.0 && v < 1.0));
        // Perturb step 4; h_1..h_3 must not move.
        let mut perturbed = base.clone();
        perturbed[3][0] = 5.0;
        let h1 = forward_h(&params, &perturbed).unwrap();
        for t in 0..3 {
            assert_eq!(h0[t], h1[t], "h at step {} changed", t + 1);
        }
        assert_ne!(h0[3], h1[3]);
    }

    #[test]
    fn zero_weights_give_half() {
        let params = init_network(&tiny_config()).unwrap();
        let mut zeroed = params.clone();
        zeroed.scale(0.0);
        let h = forward_h(&zeroed, &path_features(&[1.0, 2.0, 3.0])).unwrap();
        for v in h {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn soft_weights_hand_cases() {
        let d = soft_weights(&[0.5, 0.5, 0.3]).unwrap();
        assert_abs_diff_eq!(d[0], 0.5);
        assert_abs_diff_eq!(d[1], 0.25);
        assert_abs_diff_eq!(d[2], 0.25);

        let d = soft_weights(&[0.9]).unwrap();
        assert_eq!(d, vec![1.0]);

        let d = soft_weights(&[0.1, 0.2, 0.3, 0.9]).unwrap();
        assert_abs_diff_eq!(d[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.18, epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], 0.216, epsilon = 1e-15);
        assert_abs_diff_eq!(d[3], 0.504, epsilon = 1e-15);
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn soft_weights_rejects_out_of_range() {
        assert!(soft_weights(&[0.5, 1.0]).is_err());
        assert!(soft_weights(&[0.0]).is_err());
        assert!(soft_weights(&[]).is_err());
    }

    #[test]
    fn loss_hand_cases() {
        // Constant price 1 => loss 1 for any params.
        let params = init_network(&tiny_config()).unwrap();
        let paths = single_series_paths(vec![vec![1.0; 6]; 4]);
        assert_abs_diff_eq!(loss(&params, &paths, 0).unwrap(), 1.0, epsilon = 1e-12);

        // h == 0.5 on paths (1,3) and (3,1): loss = 2.
        let (l, _) = loss_and_h_grads(&[0.5, 0.5], &[1.0, 3.0]).unwrap();
        let (l2, _) = loss_and_h_grads(&[0.5, 0.5], &[3.0, 1.0]).unwrap();
        assert_abs_diff_eq!((l + l2) / 2.0, 2.0, epsilon = 1e-12);

        // Saturating h_1 -> 1 forces D = (1, 0): loss -> X_1.
        let (l, _) = loss_and_h_grads(&[1.0 - 1e-12, 0.5], &[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(l, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn terminal_head_gradient_is_exactly_zero() {
        let (_, g) = loss_and_h_grads(&[0.3, 0.6, 0.2, 0.8], &[1.0, 0.9, 1.2, 0.7]).unwrap();
        assert_eq!(g[3], 0.0);
        // T = 1: D_1 = 1 regardless of h, so the gradient vanishes entirely.
        let (l, g) = loss_and_h_grads(&[0.42], &[1.7]).unwrap();
        assert_eq!(l, 1.7);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn constant_prices_zero_all_parameter_gradients() {
        let params = init_network(&tiny_config()).unwrap();
        let paths = single_series_paths(vec![vec![1.0; 5]; 3]);
        let mut grads = gradient(&params, &paths, 0).unwrap();
        for g in grads.flat_mut() {
            assert_eq!(*g, 0.0);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // One randomized tiny instance here; the acceptance suite sweeps 100.
        let cfg = StopNetConfig {
            hidden_dim: 3,
            mlp_hidden: vec![3],
            seed: 19,
            ..tiny_config()
        };
        let params = init_network(&cfg).unwrap();
        let paths = single_series_paths(vec![
            vec![1.0, 0.94, 1.07, 0.88],
            vec![1.02, 1.1, 0.96, 1.01],
            vec![0.9, 0.92, 0.95, 1.2],
        ]);
        let analytic = gradient(&params, &paths, 0).unwrap();
        let mut analytic_flat = analytic.clone();
        let flat: Vec<f64> = analytic_flat.flat_mut().iter().map(|v| **v).collect();
        let eps = 1e-5;
        for k in 0..flat.len() {
            let mut plus = params.clone();
            *plus.flat_mut()[k] += eps;
            let mut minus = params.clone();
            *minus.flat_mut()[k] -= eps;
            let fd = (loss(&plus, &paths, 0).unwrap() - loss(&minus, &paths, 0).unwrap())
                / (2.0 * eps);
            // Floor the denominator: central differences carry ~1e-11
            // absolute noise at this step size.
            let denom = fd.abs().max(flat[k].abs()).max(1e-6);
            assert!(
                (fd - flat[k]).abs() / denom < 1e-4,
                "param {k}: analytic {} vs fd {fd}",
                flat[k]
            );
        }
    }

    #[test]
    fn model_bundle_round_trip_is_bit_exact() {
        let params = init_network(&tiny_config()).unwrap();
        let bundle = ModelBundle::new(vec!["s".into()], vec![params]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        bundle.save(&path).unwrap();
        let loaded = ModelBundle::load(&path).unwrap();
        assert_eq!(bundle, loaded);
    }

    proptest! {
        #[test]
        fn soft_weights_normalize_and_stay_in_unit_interval(
            h in proptest::collection::vec(1e-6..=(1.0 - 1e-6), 1..50)
        ) {
            let d = soft_weights(&h).unwrap();
            let sum: f64 = d.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            let mut cum = 0.0;
            for &dt in &d {
                prop_assert!((0.0..=1.0).contains(&dt));
                let next = cum + dt;
                prop_assert!(next + 1e-12 >= cum && next <= 1.0 + 1e-9);
                cum = next;
            }
        }

        #[test]
        fn loss_is_bounded_below_by_mean_path_minimum(
            paths in proptest::collection::vec(
                proptest::collection::vec(0.1..10.0f64, 4), 1..6),
            seed in 0u64..1000
        ) {
            let cfg = StopNetConfig { hidden_dim: 2, mlp_hidden: vec![], seed, ..Default::default() };
            let params = init_network(&cfg).unwrap();
            let ps = single_series_paths(paths.clone());
            let l = loss(&params, &ps, 0).unwrap();
            let bound: f64 = paths
                .iter()
                .map(|p| p.iter().cloned().fold(f64::INFINITY, f64::min))
                .sum::<f64>() / paths.len() as f64;
            prop_assert!(l >= bound - 1e-9, "loss {l} below bound {bound}");
        }
    }
}
