//! SGD training loop over shuffled mini-batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gradient_for_paths, init_network, loss, NetworkParams, StopNetConfig};
use crate::error::{CoreError, Result};
use crate::pathgen::PathSet;

/// Train one stopping network on the paths of one series.
///
/// Runs `epochs` passes of mini-batch SGD over a seeded shuffle and
/// returns the final parameters with the per-epoch full-data loss trace.
pub fn train(
    config: &StopNetConfig,
    paths: &PathSet,
    series_index: usize,
) -> Result<(NetworkParams, Vec<f64>)> {
    config.validate()?;
    if paths.n_paths < config.batch_size {
        return Err(CoreError::invalid(format!(
            "need at least batch_size = {} paths, got {}",
            config.batch_size, paths.n_paths
        )));
    }
    let batch_size = config.batch_size;
    let mut params = init_network(config)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut indices: Vec<usize> = (0..paths.n_paths).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(batch_size) {
            let grads = gradient_for_paths(&params, paths, series_index, chunk)?;
            params.axpy(-config.learning_rate, &grads);
        }
        let epoch_loss = loss(&params, paths, series_index)?;
        trace.push(epoch_loss);
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(CoreError::TrainingDiverged { epoch, trace });
        }
    }
    Ok((params, trace))
}
