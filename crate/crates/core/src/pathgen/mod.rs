//! Monte Carlo sample-path generation, import, and normalization.
//!
//! All stochastic modeling works on log-values so generated prices stay
//! strictly positive. Every generator is a pure function of its arguments
//! and a seed; per-(path, series) streams are derived with a counter-based
//! scheme so results do not depend on evaluation order.

mod ar;
mod bootstrap;
mod gbm;
mod io;

pub use ar::{fit_ar, sample_ar_paths, ArModel};
pub use bootstrap::bootstrap_paths;
pub use gbm::{simulate_gbm, GbmParams};
pub use io::{load_history, load_paths, read_history, read_paths, save_paths, DatedSeries};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Observed history of one series up to the decision time `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesHistory {
    pub series_id: String,
    /// (time index, value) pairs, strictly increasing index, no gaps.
    pub observations: Vec<(i64, f64)>,
    /// Index of the last observed step.
    pub t0: i64,
}

impl SeriesHistory {
    pub fn new(series_id: impl Into<String>, observations: Vec<(i64, f64)>) -> Result<Self> {
        if observations.is_empty() {
            return Err(CoreError::invalid("history must be non-empty"));
        }
        for w in observations.windows(2) {
            if w[1].0 != w[0].0 + 1 {
                return Err(CoreError::invalid(format!(
                    "history indices must be consecutive, found {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((i, v)) = observations.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(CoreError::invalid(format!(
                "history value at index {i} must be positive, got {v}"
            )));
        }
        let t0 = observations.last().unwrap().0;
        Ok(SeriesHistory {
            series_id: series_id.into(),
            observations,
            t0,
        })
    }

    /// Convenience constructor indexing values 0..n-1.
    pub fn from_values(series_id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(
            series_id,
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as i64, v))
                .collect(),
        )
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|&(_, v)| v).collect()
    }

    pub fn last_value(&self) -> f64 {
        self.observations.last().unwrap().1
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// How a [`PathSet`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gbm,
    Ar,
    Bootstrap,
    Imported,
}

/// J sample paths of N series over T future steps.
///
/// Step `t` in `1..=T` corresponds to calendar index `t0 + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub n_paths: usize,
    pub n_series: usize,
    pub horizon: usize,
    pub series_ids: Vec<String>,
    /// Row-major (path j, series i, step t-1).
    values: Vec<f64>,
    pub t0: i64,
    pub provenance: Provenance,
}

impl PathSet {
    pub fn new(
        n_paths: usize,
        n_series: usize,
        horizon: usize,
        series_ids: Vec<String>,
        values: Vec<f64>,
        t0: i64,
        provenance: Provenance,
    ) -> Result<Self> {
        if n_paths == 0 || n_series == 0 || horizon == 0 {
            return Err(CoreError::invalid("J, N, T must all be >= 1"));
        }
        if series_ids.len() != n_series {
            return Err(CoreError::invalid("series_ids length must equal N"));
        }
        if values.len() != n_paths * n_series * horizon {
            return Err(CoreError::invalid(format!(
                "expected {} values, got {}",
                n_paths * n_series * horizon,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(CoreError::invalid(format!(
                "path values must be finite and positive, got {v}"
            )));
        }
        Ok(PathSet {
            n_paths,
            n_series,
            horizon,
            series_ids,
            values,
            t0,
            provenance,
        })
    }

    #[inline]
    fn idx(&self, path: usize, series: usize, step: usize) -> usize {
        debug_assert!((1..=self.horizon).contains(&step));
        (path * self.n_series + series) * self.horizon + (step - 1)
    }

    /// Value of series `series` on path `path` at future step `step` (1-based).
    #[inline]
    pub fn value(&self, path: usize, series: usize, step: usize) -> f64 {
        self.values[self.idx(path, series, step)]
    }

    /// One path of one series as a T-length slice (steps 1..=T).
    pub fn path_slice(&self, path: usize, series: usize) -> &[f64] {
        let base = (path * self.n_series + series) * self.horizon;
        &self.values[base..base + self.horizon]
    }

    pub fn scaled(&self, factor: f64) -> Result<PathSet> {
        PathSet::new(
            self.n_paths,
            self.n_series,
            self.horizon,
            self.series_ids.clone(),
            self.values.iter().map(|v| v * factor).collect(),
            self.t0,
            self.provenance,
        )
    }

    /// Per-step mean across paths for one series.
    pub fn step_means(&self, series: usize) -> Vec<f64> {
        let mut means = vec![0.0; self.horizon];
        for j in 0..self.n_paths {
            for (t, m) in means.iter_mut().enumerate() {
                *m += self.value(j, series, t + 1);
            }
        }
        for m in &mut means {
            *m /= self.n_paths as f64;
        }
        means
    }
}

/// Combine single-series path sets (same J, T, t0) into one multi-series
/// [`PathSet`].
pub fn merge_series(sets: &[PathSet]) -> Result<PathSet> {
    if sets.is_empty() {
        return Err(CoreError::invalid("no path sets to merge"));
    }
    let first = &sets[0];
    for s in sets {
        if s.n_series != 1 {
            return Err(CoreError::invalid("merge_series expects single-series inputs"));
        }
        if s.n_paths != first.n_paths || s.horizon != first.horizon || s.t0 != first.t0 {
            return Err(CoreError::invalid("path sets differ in J, T, or t0"));
        }
    }
    let n_paths = first.n_paths;
    let horizon = first.horizon;
    let mut values = Vec::with_capacity(n_paths * sets.len() * horizon);
    for j in 0..n_paths {
        for s in sets {
            values.extend_from_slice(s.path_slice(j, 0));
        }
    }
    PathSet::new(
        n_paths,
        sets.len(),
        horizon,
        sets.iter().map(|s| s.series_ids[0].clone()).collect(),
        values,
        first.t0,
        first.provenance,
    )
}

/// Deterministic per-(path, series) RNG stream from a master seed.
///
/// The (seed, path, series) triple fills distinct words of the ChaCha key,
/// so streams never collide regardless of parallel evaluation order.
pub(crate) fn stream_rng(seed: u64, path: usize, series: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(path as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(series as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Rescale history and paths so the last observed value becomes exactly 1.
///
/// Returns the scale used, which inverts the transform.
pub fn normalize_to_unit(
    history: &SeriesHistory,
    paths: &PathSet,
) -> Result<(SeriesHistory, PathSet, f64)> {
    let scale = history.last_value();
    if !(scale > 0.0) {
        return Err(CoreError::invalid("last history value must be positive"));
    }
    let mut obs = history.observations.clone();
    for (_, v) in &mut obs {
        *v /= scale;
    }
    // Force the anchor to exactly 1 regardless of rounding.
    obs.last_mut().unwrap().1 = 1.0;
    let norm_history = SeriesHistory::new(history.series_id.clone(), obs)?;
    let norm_paths = paths.scaled(1.0 / scale)?;
    Ok((norm_history, norm_paths, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_rejects_gaps_and_nonpositive() {
        assert!(SeriesHistory::new("a", vec![(0, 1.0), (2, 1.0)]).is_err());
        assert!(SeriesHistory::new("a", vec![(0, 1.0), (1, -1.0)]).is_err());
        assert!(SeriesHistory::new("a", vec![(0, 1.0), (1, 2.0)]).is_ok());
    }

    #[test]
    fn pathset_rejects_wrong_size_and_nonpositive() {
        assert!(PathSet::new(2, 1, 3, vec!["s".into()], vec![1.0; 5], 0, Provenance::Gbm).is_err());
        let mut vals = vec![1.0; 6];
        vals[3] = -0.5;
        assert!(PathSet::new(2, 1, 3, vec!["s".into()], vals, 0, Provenance::Gbm).is_err());
    }

    #[test]
    fn merge_series_interleaves_by_path() {
        let a = PathSet::new(2, 1, 2, vec!["a".into()], vec![1.0, 2.0, 3.0, 4.0], 0, Provenance::Gbm)
            .unwrap();
        let b = PathSet::new(2, 1, 2, vec!["b".into()], vec![5.0, 6.0, 7.0, 8.0], 0, Provenance::Gbm)
            .unwrap();
        let m = merge_series(&[a, b]).unwrap();
        assert_eq!((m.n_paths, m.n_series, m.horizon), (2, 2, 2));
        assert_eq!(m.value(0, 0, 1), 1.0);
        assert_eq!(m.value(0, 1, 1), 5.0);
        assert_eq!(m.value(1, 0, 2), 4.0);
        assert_eq!(m.value(1, 1, 2), 8.0);
    }

    #[test]
    fn normalize_scales_and_inverts() {
        let hist = SeriesHistory::from_values("s", &[40.0, 45.0, 50.0]).unwrap();
        let paths =
            PathSet::new(1, 1, 2, vec!["s".into()], vec![55.0, 60.0], 2, Provenance::Imported)
                .unwrap();
        let (nh, np, scale) = normalize_to_unit(&hist, &paths).unwrap();
        assert_eq!(scale, 50.0);
        assert_eq!(nh.last_value(), 1.0);
        assert!((np.value(0, 0, 1) - 1.1).abs() < 1e-15);
        // round-trip
        let back = np.scaled(scale).unwrap();
        assert!((back.value(0, 0, 2) - 60.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_identity_when_already_unit() {
        let hist = SeriesHistory::from_values("s", &[0.9, 1.0]).unwrap();
        let paths =
            PathSet::new(1, 1, 1, vec!["s".into()], vec![1.2], 1, Provenance::Imported).unwrap();
        let (nh, np, scale) = normalize_to_unit(&hist, &paths).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(nh, hist);
        assert_eq!(np, paths);
    }
}
