use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, PathSet, Provenance, SeriesHistory};
use crate::error::{CoreError, Result};

/// Autoregressive model on log-values, fitted by ordinary least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    /// coefficients[k] multiplies log X_{t-1-k}.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub noise_sigma: f64,
    pub fitted_on: String,
}

/// Solve a symmetric linear system by Gaussian elimination with partial
/// pivoting. Returns None when the matrix is numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pivot < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Fit an AR(p) model to the log-values of `history` by OLS.
///
/// `noise_sigma` is the residual standard deviation.
pub fn fit_ar(history: &SeriesHistory, order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(CoreError::invalid("AR order must be >= 1"));
    }
    let n = history.len();
    if n < order + 2 {
        return Err(CoreError::invalid(format!(
            "history length {n} too short for AR({order}); need at least {}",
            order + 2
        )));
    }
    let logs: Vec<f64> = history.values().iter().map(|v| v.ln()).collect();
    let rows = n - order;
    let dim = order + 1; // intercept + p lags
    // Design matrix row for target logs[t]: [1, logs[t-1], ..., logs[t-p]].
    let design_row = |t: usize| -> Vec<f64> {
        let mut row = Vec::with_capacity(dim);
        row.push(1.0);
        for k in 0..order {
            row.push(logs[t - 1 - k]);
        }
        row
    };
    // Normal equations X'X beta = X'y.
    let mut xtx = vec![vec![0.0; dim]; dim];
    let mut xty = vec![0.0; dim];
    for t in order..n {
        let row = design_row(t);
        let y = logs[t];
        for a in 0..dim {
            xty[a] += row[a] * y;
            for b in 0..dim {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let beta = solve(xtx, xty).ok_or_else(|| CoreError::Degenerate {
        series: history.series_id.clone(),
        detail: "singular design matrix in AR fit".into(),
    })?;
    let intercept = beta[0];
    let coefficients = beta[1..].to_vec();
    let mut ss = 0.0;
    for t in order..n {
        let row = design_row(t);
        let pred: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
        ss += (logs[t] - pred).powi(2);
    }
    let noise_sigma = (ss / rows as f64).sqrt();
    Ok(ArModel {
        order,
        coefficients,
        intercept,
        noise_sigma,
        fitted_on: history.series_id.clone(),
    })
}

/// Generate future paths from an AR model on log-values.
///
/// The recursion is seeded with the last `p` history values; fresh Gaussian
/// noise per step and path; results are exponentiated back to prices.
pub fn sample_ar_paths(
    model: &ArModel,
    history: &SeriesHistory,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<PathSet> {
    if n_paths == 0 || horizon == 0 {
        return Err(CoreError::invalid("n_paths and horizon must be >= 1"));
    }
    if history.len() < model.order {
        return Err(CoreError::invalid(format!(
            "history length {} shorter than AR order {}",
            history.len(),
            model.order
        )));
    }
    if model.noise_sigma < 0.0 {
        return Err(CoreError::invalid("noise_sigma must be non-negative"));
    }
    let logs: Vec<f64> = history.values().iter().map(|v| v.ln()).collect();
    let p = model.order;
    let mut values = Vec::with_capacity(n_paths * horizon);
    for j in 0..n_paths {
        let mut rng = stream_rng(seed, j, 0);
        // state[0] is the most recent log-value.
        let mut state: Vec<f64> = logs.iter().rev().take(p).cloned().collect();
        for _ in 0..horizon {
            let mut next = model.intercept;
            for (k, c) in model.coefficients.iter().enumerate() {
                next += c * state[k];
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            next += model.noise_sigma * z;
            state.rotate_right(1);
            state[0] = next;
            values.push(next.exp());
        }
    }
    PathSet::new(
        n_paths,
        1,
        horizon,
        vec![history.series_id.clone()],
        values,
        history.t0,
        Provenance::Ar,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ar1_history(coeff: f64, sigma: f64, len: usize, seed: u64) -> SeriesHistory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log_x = 0.0f64;
        let mut vals = Vec::with_capacity(len);
        for _ in 0..len {
            let z: f64 = StandardNormal.sample(&mut rng);
            log_x = coeff * log_x + sigma * z;
            vals.push(log_x.exp());
        }
        SeriesHistory::from_values("synthetic", &vals).unwrap()
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let hist = ar1_history(0.5, 1e-3, 500, 11);
        let model = fit_ar(&hist, 1).unwrap();
        assert!(
            (model.coefficients[0] - 0.5).abs() < 0.05,
            "got {}",
            model.coefficients[0]
        );
        // Closed-form simple-regression oracle on the same data.
        let logs: Vec<f64> = hist.values().iter().map(|v| v.ln()).collect();
        let x = &logs[..logs.len() - 1];
        let y = &logs[1..];
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let var: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = cov / var;
        assert!((model.coefficients[0] - slope).abs() < 1e-10);
        assert!((model.intercept - (my - slope * mx)).abs() < 1e-10);
    }

    #[test]
    fn constant_history_is_degenerate() {
        let hist = SeriesHistory::from_values("flat", &vec![1.0; 50]).unwrap();
        match fit_ar(&hist, 1) {
            Err(CoreError::Degenerate { series, .. }) => assert_eq!(series, "flat"),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn too_short_history_is_invalid() {
        let hist = SeriesHistory::from_values("s", &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(fit_ar(&hist, 2), Err(CoreError::InvalidArgument(_))));
    }

    #[test]
    fn zero_noise_random_walk_is_constant() {
        let model = ArModel {
            order: 1,
            coefficients: vec![1.0],
            intercept: 0.0,
            noise_sigma: 0.0,
            fitted_on: "s".into(),
        };
        let hist = SeriesHistory::from_values("s", &[1.5, 2.0, 2.5]).unwrap();
        let ps = sample_ar_paths(&model, &hist, 4, 6, 3).unwrap();
        for j in 0..4 {
            for t in 1..=6 {
                assert!((ps.value(j, 0, t) - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_paths() {
        let hist = ar1_history(0.8, 0.02, 60, 5);
        let model = fit_ar(&hist, 1).unwrap();
        let a = sample_ar_paths(&model, &hist, 16, 10, 77).unwrap();
        let b = sample_ar_paths(&model, &hist, 16, 10, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_matches_lognormal_ar_expectation() {
        // AR(1) on logs: L_t = c + a L_{t-1} + sigma Z.
        // Exact per-step law: L_t ~ N(m_t, v_t) with
        //   m_t = c + a m_{t-1},  v_t = a^2 v_{t-1} + sigma^2,
        // so E[X_t] = exp(m_t + v_t / 2).
        let model = ArModel {
            order: 1,
            coefficients: vec![0.5],
            intercept: 0.01,
            noise_sigma: 0.01,
            fitted_on: "s".into(),
        };
        let hist = SeriesHistory::from_values("s", &[1.0, 1.0, 1.1]).unwrap();
        let n = 5000usize;
        let horizon = 5usize;
        let ps = sample_ar_paths(&model, &hist, n, horizon, 123).unwrap();

        let mut m = (1.1f64).ln();
        let mut v = 0.0f64;
        for t in 1..=horizon {
            m = model.intercept + model.coefficients[0] * m;
            v = model.coefficients[0].powi(2) * v + model.noise_sigma.powi(2);
            let expected = (m + v / 2.0).exp();
            let vals: Vec<f64> = (0..n).map(|j| ps.value(j, 0, t)).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - expected).abs() < 3.0 * se,
                "step {t}: mean {mean} expected {expected} se {se}"
            );
        }
    }
}
