use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, PathSet, Provenance};
use crate::error::{CoreError, Result};

/// Per-step geometric Brownian motion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl GbmParams {
    fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0) {
            return Err(CoreError::invalid("s0 must be positive"));
        }
        if self.sigma < 0.0 {
            return Err(CoreError::invalid("sigma must be non-negative"));
        }
        Ok(())
    }
}

/// Simulate `S_{t+1} = S_t * exp((mu - sigma^2/2) + sigma * Z)` with
/// standard normal Z, one series, `n_paths` paths over `horizon` steps.
pub fn simulate_gbm(
    params: &GbmParams,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<PathSet> {
    params.validate()?;
    if n_paths == 0 || horizon == 0 {
        return Err(CoreError::invalid("n_paths and horizon must be >= 1"));
    }
    let drift = params.mu - 0.5 * params.sigma * params.sigma;
    let mut values = Vec::with_capacity(n_paths * horizon);
    for j in 0..n_paths {
        let mut rng = stream_rng(seed, j, 0);
        let mut log_s = params.s0.ln();
        for _ in 0..horizon {
            let z: f64 = StandardNormal.sample(&mut rng);
            log_s += drift + params.sigma * z;
            values.push(log_s.exp());
        }
    }
    PathSet::new(n_paths, 1, horizon, vec!["gbm".into()], values, 0, Provenance::Gbm)
}
