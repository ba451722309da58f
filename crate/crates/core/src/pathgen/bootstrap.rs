use rand::Rng;

use super::{stream_rng, PathSet, Provenance, SeriesHistory};
use crate::error::{CoreError, Result};

/// Circular block bootstrap of historical log-returns.
///
/// Future log-returns are drawn as contiguous blocks of the observed
/// returns, wrapping around the end; each path starts from the last
/// observed value.
pub fn bootstrap_paths(
    history: &SeriesHistory,
    block_len: usize,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<PathSet> {
    if block_len == 0 {
        return Err(CoreError::invalid("block_len must be >= 1"));
    }
    if n_paths == 0 || horizon == 0 {
        return Err(CoreError::invalid("n_paths and horizon must be >= 1"));
    }
    let values = history.values();
    if values.len() < block_len + 1 {
        return Err(CoreError::invalid(format!(
            "history has {} observations; need at least block_len + 1 = {}",
            values.len(),
            block_len + 1
        )));
    }
    let returns: Vec<f64> = values.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    if block_len > returns.len() {
        return Err(CoreError::invalid(format!(
            "block_len {} exceeds available returns {}",
            block_len,
            returns.len()
        )));
    }
    let n_ret = returns.len();
    let last = *values.last().unwrap();
    let mut out = Vec::with_capacity(n_paths * horizon);
    for j in 0..n_paths {
        let mut rng = stream_rng(seed, j, 0);
        let mut log_s = last.ln();
        let mut filled = 0;
        while filled < horizon {
            let start = rng.gen_range(0..n_ret);
            let take = block_len.min(horizon - filled);
            for k in 0..take {
                log_s += returns[(start + k) % n_ret];
                out.push(log_s.exp());
            }
            filled += take;
        }
    }
    PathSet::new(
        n_paths,
        1,
        horizon,
        vec![history.series_id.clone()],
        out,
        history.t0,
        Provenance::Bootstrap,
    )
}
