//! Exact ground truth on recombining binomial lattices: backward
//! induction and brute-force enumeration of adapted stopping rules.
//! Stopping is allowed at steps 1..=T only, so the root value is the
//! expectation over the two step-1 nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pathgen::{PathSet, Provenance};

/// Recombining binomial price lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeModel {
    pub s0: f64,
    pub up: f64,
    pub down: f64,
    pub p_up: f64,
    pub horizon: usize,
}

impl LatticeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0) {
            return Err(CoreError::invalid("s0 must be positive"));
        }
        if !(self.up > 1.0) || !(self.down > 0.0 && self.down < 1.0) {
            return Err(CoreError::invalid("need up > 1 and 0 < down < 1"));
        }
        if !(self.p_up > 0.0 && self.p_up < 1.0) {
            return Err(CoreError::invalid("p_up must lie in (0,1)"));
        }
        if self.horizon == 0 {
            return Err(CoreError::invalid("horizon must be >= 1"));
        }
        Ok(())
    }

    /// Price at node (step t, up-count k).
    pub fn price(&self, t: usize, k: usize) -> f64 {
        self.s0 * self.up.powi(k as i32) * self.down.powi((t - k) as i32)
    }
}

/// Stop/continue decision and exact value at every lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePolicy {
    /// stop[t][k] for t in 1..=T (index t-1); all true at t = T.
    pub stop: Vec<Vec<bool>>,
    /// value[t][k], the minimal expected cost from node (t, k) onward.
    pub value: Vec<Vec<f64>>,
}

/// Backward induction: V(T,k) = price; V(t,k) = min(price, continuation).
/// Returns the root value (expectation over the step-1 nodes, since
/// stopping at t = 0 is disallowed) and the full policy.
pub fn lattice_value(model: &LatticeModel) -> Result<(f64, OraclePolicy)> {
    model.validate()?;
    let horizon = model.horizon;
    let mut value: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut stop: Vec<Vec<bool>> = Vec::with_capacity(horizon);
    value.resize(horizon, Vec::new());
    stop.resize(horizon, Vec::new());
    // t runs from T down to 1; row index t-1 has t+1 nodes.
    for t in (1..=horizon).rev() {
        let mut row_v = Vec::with_capacity(t + 1);
        let mut row_s = Vec::with_capacity(t + 1);
        for k in 0..=t {
            let exercise = model.price(t, k);
            if t == horizon {
                row_v.push(exercise);
                row_s.push(true);
            } else {
                let cont = model.p_up * value[t][k + 1] + (1.0 - model.p_up) * value[t][k];
                row_v.push(exercise.min(cont));
                row_s.push(exercise <= cont);
            }
        }
        value[t - 1] = row_v;
        stop[t - 1] = row_s;
    }
    let root = model.p_up * value[0][1] + (1.0 - model.p_up) * value[0][0];
    Ok((root, OraclePolicy { stop, value }))
}

/// Brute force over every adapted stopping rule: one stop/continue bit per
/// non-terminal node at steps 1..T-1, evaluated exactly over all 2^T
/// binary paths. Refuses T > 4.
pub fn exhaustive_adapted_value(model: &LatticeModel) -> Result<f64> {
    model.validate()?;
    let horizon = model.horizon;
    if horizon > 4 {
        return Err(CoreError::invalid(format!(
            "exhaustive enumeration is limited to T <= 4, got T = {horizon}"
        )));
    }
    // Decision nodes: (t, k) for t in 1..horizon (stopping at T is forced).
    let mut nodes = Vec::new();
    for t in 1..horizon {
        for k in 0..=t {
            nodes.push((t, k));
        }
    }
    let n_bits = nodes.len();
    let node_index = |t: usize, k: usize| -> usize {
        // nodes are packed by increasing t; t rows before t' have sizes 2..=t'.
        nodes.iter().position(|&n| n == (t, k)).unwrap()
    };
    let mut best = f64::INFINITY;
    for rule in 0u64..(1u64 << n_bits) {
        let expected = evaluate_rule(model, rule, &node_index);
        if expected < best {
            best = expected;
        }
    }
    Ok(best)
}

/// Exact expected cost of one stop/continue rule by forward probability
/// propagation over lattice nodes.
fn evaluate_rule(
    model: &LatticeModel,
    rule: u64,
    node_index: &dyn Fn(usize, usize) -> usize,
) -> f64 {
    let horizon = model.horizon;
    // reach[k]: probability of being at (t, k) without having stopped.
    let mut reach = vec![1.0]; // t = 0, k = 0
    let mut expected = 0.0;
    for t in 1..=horizon {
        let mut next = vec![0.0; t + 1];
        for (k, &pr) in reach.iter().enumerate() {
            if pr == 0.0 {
                continue;
            }
            next[k + 1] += pr * model.p_up;
            next[k] += pr * (1.0 - model.p_up);
        }
        for (k, pr) in next.iter_mut().enumerate() {
            if *pr == 0.0 {
                continue;
            }
            let stops = t == horizon || (rule >> node_index(t, k)) & 1 == 1;
            if stops {
                expected += *pr * model.price(t, k);
                *pr = 0.0;
            }
        }
        reach = next;
    }
    expected
}

/// I.i.d. lattice trajectories as a single-series [`PathSet`].
pub fn sample_lattice_paths(
    model: &LatticeModel,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    model.validate()?;
    if n_paths == 0 {
        return Err(CoreError::invalid("n_paths must be >= 1"));
    }
    let mut values = Vec::with_capacity(n_paths * model.horizon);
    for j in 0..n_paths {
        let mut rng = crate::pathgen::stream_rng(seed, j, 0);
        let mut s = model.s0;
        for _ in 0..model.horizon {
            let u: f64 = rng.gen();
            s *= if u < model.p_up { model.up } else { model.down };
            values.push(s);
        }
    }
    PathSet::new(
        n_paths,
        1,
        model.horizon,
        vec!["lattice".into()],
        values,
        0,
        Provenance::Gbm,
    )
}
