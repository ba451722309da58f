//! Gated recurrent cell plus feed-forward head, with hand-written
//! reverse-mode gradients.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{sigmoid, vec_axpy, Mat};
use super::StopNetConfig;
use crate::error::{CoreError, Result};

/// Head outputs are kept inside (0,1) by this margin before the stopping
/// recursion consumes them.
pub const HEAD_CLAMP: f64 = 1e-7;

/// Update/reset/candidate gates, each with input and hidden weights and
/// separate input/hidden biases (the candidate's hidden bias sits inside
/// the reset product).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_update: Mat,
    pub w_reset: Mat,
    pub w_cand: Mat,
    pub u_update: Mat,
    pub u_reset: Mat,
    pub u_cand: Mat,
    pub b_i_update: Vec<f64>,
    pub b_i_reset: Vec<f64>,
    pub b_i_cand: Vec<f64>,
    pub b_h_update: Vec<f64>,
    pub b_h_reset: Vec<f64>,
    pub b_h_cand: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLayer {
    pub w: Mat,
    pub b: Vec<f64>,
}

/// All weights of one per-series stopping network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub config: StopNetConfig,
    pub cell: GruParams,
    /// Tanh hidden layers followed by a final 1-row sigmoid layer.
    pub head: Vec<HeadLayer>,
}

/// Same shape as [`NetworkParams`].
pub type Gradients = NetworkParams;

fn init_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let bound = 1.0 / (cols as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Mat {
        rows,
        cols,
        data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    }
}

/// Initialize weights uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from
/// the config seed; biases zero.
pub fn init_network(config: &StopNetConfig) -> Result<NetworkParams> {
    config.validate()?;
    let h = config.hidden_dim;
    let i = config.input_features;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cell = GruParams {
        w_update: init_mat(h, i, &mut rng),
        w_reset: init_mat(h, i, &mut rng),
        w_cand: init_mat(h, i, &mut rng),
        u_update: init_mat(h, h, &mut rng),
        u_reset: init_mat(h, h, &mut rng),
        u_cand: init_mat(h, h, &mut rng),
        b_i_update: vec![0.0; h],
        b_i_reset: vec![0.0; h],
        b_i_cand: vec![0.0; h],
        b_h_update: vec![0.0; h],
        b_h_reset: vec![0.0; h],
        b_h_cand: vec![0.0; h],
    };
    let mut head = Vec::new();
    let mut in_dim = h;
    for &width in &config.mlp_hidden {
        head.push(HeadLayer {
            w: init_mat(width, in_dim, &mut rng),
            b: vec![0.0; width],
        });
        in_dim = width;
    }
    head.push(HeadLayer {
        w: init_mat(1, in_dim, &mut rng),
        b: vec![0.0; 1],
    });
    Ok(NetworkParams {
        config: config.clone(),
        cell,
        head,
    })
}

impl NetworkParams {
    pub fn zeros_like(&self) -> Gradients {
        let z = |m: &Mat| Mat::zeros(m.rows, m.cols);
        NetworkParams {
            config: self.config.clone(),
            cell: GruParams {
                w_update: z(&self.cell.w_update),
                w_reset: z(&self.cell.w_reset),
                w_cand: z(&self.cell.w_cand),
                u_update: z(&self.cell.u_update),
                u_reset: z(&self.cell.u_reset),
                u_cand: z(&self.cell.u_cand),
                b_i_update: vec![0.0; self.cell.b_i_update.len()],
                b_i_reset: vec![0.0; self.cell.b_i_reset.len()],
                b_i_cand: vec![0.0; self.cell.b_i_cand.len()],
                b_h_update: vec![0.0; self.cell.b_h_update.len()],
                b_h_reset: vec![0.0; self.cell.b_h_reset.len()],
                b_h_cand: vec![0.0; self.cell.b_h_cand.len()],
            },
            head: self
                .head
                .iter()
                .map(|l| HeadLayer {
                    w: Mat::zeros(l.w.rows, l.w.cols),
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    /// self += scale * other, weight by weight.
    pub fn axpy(&mut self, scale: f64, other: &Gradients) {
        self.cell.w_update.axpy(scale, &other.cell.w_update);
        self.cell.w_reset.axpy(scale, &other.cell.w_reset);
        self.cell.w_cand.axpy(scale, &other.cell.w_cand);
        self.cell.u_update.axpy(scale, &other.cell.u_update);
        self.cell.u_reset.axpy(scale, &other.cell.u_reset);
        self.cell.u_cand.axpy(scale, &other.cell.u_cand);
        vec_axpy(&mut self.cell.b_i_update, scale, &other.cell.b_i_update);
        vec_axpy(&mut self.cell.b_i_reset, scale, &other.cell.b_i_reset);
        vec_axpy(&mut self.cell.b_i_cand, scale, &other.cell.b_i_cand);
        vec_axpy(&mut self.cell.b_h_update, scale, &other.cell.b_h_update);
        vec_axpy(&mut self.cell.b_h_reset, scale, &other.cell.b_h_reset);
        vec_axpy(&mut self.cell.b_h_cand, scale, &other.cell.b_h_cand);
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            a.w.axpy(scale, &b.w);
            vec_axpy(&mut a.b, scale, &b.b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let cell = &mut self.cell;
        for m in [
            &mut cell.w_update,
            &mut cell.w_reset,
            &mut cell.w_cand,
            &mut cell.u_update,
            &mut cell.u_reset,
            &mut cell.u_cand,
        ] {
            m.scale(factor);
        }
        for v in [
            &mut cell.b_i_update,
            &mut cell.b_i_reset,
            &mut cell.b_i_cand,
            &mut cell.b_h_update,
            &mut cell.b_h_reset,
            &mut cell.b_h_cand,
        ] {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
        for l in &mut self.head {
            l.w.scale(factor);
            for x in &mut l.b {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        let c = &self.cell;
        c.w_update.is_finite()
            && c.w_reset.is_finite()
            && c.w_cand.is_finite()
            && c.u_update.is_finite()
            && c.u_reset.is_finite()
            && c.u_cand.is_finite()
            && [
                &c.b_i_update,
                &c.b_i_reset,
                &c.b_i_cand,
                &c.b_h_update,
                &c.b_h_reset,
                &c.b_h_cand,
            ]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self
                .head
                .iter()
                .all(|l| l.w.is_finite() && l.b.iter().all(|x| x.is_finite()))
    }

    /// Flat view of every parameter, used by the finite-difference checks.
    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        let c = &mut self.cell;
        for m in [
            &mut c.w_update,
            &mut c.w_reset,
            &mut c.w_cand,
            &mut c.u_update,
            &mut c.u_reset,
            &mut c.u_cand,
        ] {
            out.extend(m.data.iter_mut());
        }
        for v in [
            &mut c.b_i_update,
            &mut c.b_i_reset,
            &mut c.b_i_cand,
            &mut c.b_h_update,
            &mut c.b_h_reset,
            &mut c.b_h_cand,
        ] {
            out.extend(v.iter_mut());
        }
        for l in &mut self.head {
            out.extend(l.w.data.iter_mut());
            out.extend(l.b.iter_mut());
        }
        out
    }
}

pub(crate) struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    update: Vec<f64>,
    reset: Vec<f64>,
    cand: Vec<f64>,
    /// U_cand h_prev + b_h_cand, before the reset product.
    cand_hidden: Vec<f64>,
    hidden: Vec<f64>,
    /// Post-activation output of every head layer (last is the sigmoid).
    head_acts: Vec<Vec<f64>>,
    /// True when the raw sigmoid output was clamped.
    clamped: bool,
}

pub(crate) struct ForwardCache {
    pub steps: Vec<StepCache>,
    /// Clamped head outputs, one per step.
    pub outputs: Vec<f64>,
}

pub(crate) fn forward_cached(
    params: &NetworkParams,
    features: &[Vec<f64>],
) -> Result<ForwardCache> {
    let h_dim = params.config.hidden_dim;
    let mut h_prev = vec![0.0; h_dim];
    let mut steps = Vec::with_capacity(features.len());
    let mut outputs = Vec::with_capacity(features.len());
    for (t, x) in features.iter().enumerate() {
        if x.len() != params.config.input_features {
            return Err(CoreError::invalid(format!(
                "expected {} features per step, got {}",
                params.config.input_features,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numerical(format!(
                "non-finite input feature at step {}",
                t + 1
            )));
        }
        let cell = &params.cell;
        let mut a_update = cell.b_i_update.clone();
        vec_axpy(&mut a_update, 1.0, &cell.b_h_update);
        cell.w_update.mul_vec_add(x, &mut a_update);
        cell.u_update.mul_vec_add(&h_prev, &mut a_update);
        let update: Vec<f64> = a_update.iter().map(|&v| sigmoid(v)).collect();

        let mut a_reset = cell.b_i_reset.clone();
        vec_axpy(&mut a_reset, 1.0, &cell.b_h_reset);
        cell.w_reset.mul_vec_add(x, &mut a_reset);
        cell.u_reset.mul_vec_add(&h_prev, &mut a_reset);
        let reset: Vec<f64> = a_reset.iter().map(|&v| sigmoid(v)).collect();

        let mut cand_hidden = cell.b_h_cand.clone();
        cell.u_cand.mul_vec_add(&h_prev, &mut cand_hidden);
        let mut a_cand = cell.b_i_cand.clone();
        cell.w_cand.mul_vec_add(x, &mut a_cand);
        for k in 0..h_dim {
            a_cand[k] += reset[k] * cand_hidden[k];
        }
        let cand: Vec<f64> = a_cand.iter().map(|&v| v.tanh()).collect();

        let hidden: Vec<f64> = (0..h_dim)
            .map(|k| (1.0 - update[k]) * h_prev[k] + update[k] * cand[k])
            .collect();

        // Head: tanh hidden layers, sigmoid output.
        let mut head_acts: Vec<Vec<f64>> = Vec::with_capacity(params.head.len());
        let mut cur = hidden.clone();
        let last = params.head.len() - 1;
        for (li, layer) in params.head.iter().enumerate() {
            let mut pre = layer.b.clone();
            layer.w.mul_vec_add(&cur, &mut pre);
            let act: Vec<f64> = if li == last {
                pre.iter().map(|&v| sigmoid(v)).collect()
            } else {
                pre.iter().map(|&v| v.tanh()).collect()
            };
            head_acts.push(act.clone());
            cur = act;
        }
        let raw = head_acts.last().unwrap()[0];
        if !raw.is_finite() {
            return Err(CoreError::Numerical(format!(
                "non-finite head output at step {}",
                t + 1
            )));
        }
        let out = raw.clamp(HEAD_CLAMP, 1.0 - HEAD_CLAMP);
        outputs.push(out);
        steps.push(StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            update,
            reset,
            cand,
            cand_hidden,
            hidden: hidden.clone(),
            head_acts,
            clamped: out != raw,
        });
        h_prev = hidden;
    }
    Ok(ForwardCache { steps, outputs })
}

/// Backpropagate `d_out[t] = dL/d(clamped head output at step t)` through
/// the head and the recurrent cell, accumulating into `grads`.
pub(crate) fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    d_out: &[f64],
    grads: &mut Gradients,
) {
    let h_dim = params.config.hidden_dim;
    let horizon = cache.steps.len();
    let last = params.head.len() - 1;
    // dL/d hidden state arriving from the future.
    let mut d_hidden_carry = vec![0.0; h_dim];
    for t in (0..horizon).rev() {
        let step = &cache.steps[t];
        let mut d_hidden = d_hidden_carry.clone();

        // Head backward for this step.
        if d_out[t] != 0.0 && !step.clamped {
            let sig = step.head_acts[last][0];
            let mut d_act = vec![d_out[t] * sig * (1.0 - sig)];
            for li in (0..params.head.len()).rev() {
                let layer = &params.head[li];
                let input: &[f64] = if li == 0 {
                    &step.hidden
                } else {
                    &step.head_acts[li - 1]
                };
                // d_act currently holds dL/d(pre-activation) of layer li.
                grads.head[li].w.add_outer(&d_act, input);
                vec_axpy(&mut grads.head[li].b, 1.0, &d_act);
                let mut d_input = vec![0.0; layer.w.cols];
                layer.w.mul_tvec_add(&d_act, &mut d_input);
                if li == 0 {
                    vec_axpy(&mut d_hidden, 1.0, &d_input);
                } else {
                    let prev_act = &step.head_acts[li - 1];
                    d_act = d_input
                        .iter()
                        .zip(prev_act)
                        .map(|(&g, &a)| g * (1.0 - a * a))
                        .collect();
                }
            }
        }

        // Cell backward.
        let mut d_h_prev = vec![0.0; h_dim];
        let mut d_a_update = vec![0.0; h_dim];
        let mut d_a_reset = vec![0.0; h_dim];
        let mut d_a_cand = vec![0.0; h_dim];
        for k in 0..h_dim {
            let dz = d_hidden[k] * (step.cand[k] - step.h_prev[k]);
            let dn = d_hidden[k] * step.update[k];
            d_h_prev[k] += d_hidden[k] * (1.0 - step.update[k]);
            d_a_cand[k] = dn * (1.0 - step.cand[k] * step.cand[k]);
            let dr = d_a_cand[k] * step.cand_hidden[k];
            let d_cand_hidden = d_a_cand[k] * step.reset[k];
            d_a_reset[k] = dr * step.reset[k] * (1.0 - step.reset[k]);
            d_a_update[k] = dz * step.update[k] * (1.0 - step.update[k]);
            // cand_hidden = U_cand h_prev + b_h_cand
            grads.cell.b_h_cand[k] += d_cand_hidden;
            // d_hidden[k] is no longer needed; reuse it as dL/d cand_hidden.
            d_hidden[k] = d_cand_hidden;
        }
        // d_hidden now holds dL/d cand_hidden.
        params.cell.u_cand.mul_tvec_add(&d_hidden, &mut d_h_prev);
        grads.cell.u_cand.add_outer(&d_hidden, &step.h_prev);

        grads.cell.w_update.add_outer(&d_a_update, &step.x);
        grads.cell.w_reset.add_outer(&d_a_reset, &step.x);
        grads.cell.w_cand.add_outer(&d_a_cand, &step.x);
        grads.cell.u_update.add_outer(&d_a_update, &step.h_prev);
        grads.cell.u_reset.add_outer(&d_a_reset, &step.h_prev);
        vec_axpy(&mut grads.cell.b_i_update, 1.0, &d_a_update);
        vec_axpy(&mut grads.cell.b_h_update, 1.0, &d_a_update);
        vec_axpy(&mut grads.cell.b_i_reset, 1.0, &d_a_reset);
        vec_axpy(&mut grads.cell.b_h_reset, 1.0, &d_a_reset);
        vec_axpy(&mut grads.cell.b_i_cand, 1.0, &d_a_cand);
        params.cell.u_update.mul_tvec_add(&d_a_update, &mut d_h_prev);
        params.cell.u_reset.mul_tvec_add(&d_a_reset, &mut d_h_prev);

        d_hidden_carry = d_h_prev;
    }
}
