//! Analytic gradients for one BPTT window.
//!
//! The pass caches every activation of the forward sweep, then walks
//! steps in reverse, layers top to bottom. Gradient flow into the
//! window's initial state is dropped (truncation boundary).

use crate::corpus::one_hot;
use crate::{Error, Result};

use super::{
    logits_from_top, softmax, step_stack, BlockActivation, CrossEntropyLoss, ModelParams,
    NetState, PROB_FLOOR,
};

/// Result of one backward sweep over a window.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    /// Gradients of the mean per-character loss, same shape as the
    /// parameters.
    pub grads: ModelParams,
    pub loss: CrossEntropyLoss,
    /// State after the window, for carrying into the next batch.
    pub final_state: NetState,
}

struct StepCache {
    layer_inputs: Vec<Vec<f64>>,
    acts: Vec<Vec<BlockActivation>>,
    probs: Vec<f64>,
}

fn zeros_like(params: &ModelParams) -> ModelParams {
    let mut z = params.clone();
    for t in z.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    z
}

/// `out[r * cols + c] += d[r] * x[c]`
fn outer_add(out: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dv) in d.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        let row = &mut out[r * cols..(r + 1) * cols];
        for (ov, &xv) in row.iter_mut().zip(x) {
            *ov += dv * xv;
        }
    }
}

fn add_scaled(out: &mut [f64], v: &[f64]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += x;
    }
}

/// Gradients of the mean cross-entropy of `targets` given `inputs`,
/// starting from `state`, truncated at the window boundary.
pub fn backward(
    params: &ModelParams,
    inputs: &[usize],
    targets: &[usize],
    state: &NetState,
) -> Result<BackwardPass> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "backward window: {} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let vocab = params.vocab_size;
    for &id in inputs.iter().chain(targets) {
        if id >= vocab {
            return Err(Error::InvalidId { id, vocab });
        }
    }
    let steps = inputs.len();
    let units = params.units_per_block;

    // Forward sweep with full caching.
    let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
    let mut current = state.clone();
    let mut total_nll = 0.0;
    let mut clamped = 0;
    for (&id, &target) in inputs.iter().zip(targets) {
        let (layer_inputs, acts) = step_stack(params, &one_hot(id, vocab), &current);
        current = NetState {
            h: acts
                .iter()
                .map(|layer| layer.iter().map(|a| a.h_new.clone()).collect())
                .collect(),
        };
        let probs = softmax(&logits_from_top(params, layer_inputs.last().unwrap()));
        let p = probs[target];
        if p < PROB_FLOOR {
            clamped += 1;
        }
        total_nll -= p.max(PROB_FLOOR).ln();
        caches.push(StepCache {
            layer_inputs,
            acts,
            probs,
        });
    }
    let scale = 1.0 / steps as f64;

    let mut grads = zeros_like(params);
    // Gradient flowing into each block's hidden state from the step above.
    let mut d_carry: Vec<Vec<Vec<f64>>> =
        vec![vec![vec![0.0; units]; params.blocks_per_layer]; params.layers];

    for t in (0..steps).rev() {
        let cache = &caches[t];

        // Softmax cross-entropy: dlogits = (probs - onehot(target)) / T
        let mut d_logits = cache.probs.clone();
        d_logits[targets[t]] -= 1.0;
        for v in &mut d_logits {
            *v *= scale;
        }

        let top = cache.layer_inputs.last().unwrap();
        add_scaled(&mut grads.proj_b, &d_logits);
        outer_add(&mut grads.proj_w, top, &d_logits);
        // d_y[k] = sum_v proj_w[k][v] * dlogits[v]
        let mut d_out: Vec<f64> = (0..params.top_width())
            .map(|k| {
                params.proj_w[k * vocab..(k + 1) * vocab]
                    .iter()
                    .zip(&d_logits)
                    .map(|(w, d)| w * d)
                    .sum()
            })
            .collect();

        for l in (0..params.layers).rev() {
            let in_dim = params.layer_input_width(l);
            let input = &cache.layer_inputs[l];
            let mut d_input = vec![0.0; in_dim];
            for b in 0..params.blocks_per_layer {
                let act = &cache.acts[l][b];
                let h_prev: &[f64] = if t == 0 {
                    &state.h[l][b]
                } else {
                    &caches[t - 1].acts[l][b].h_new
                };
                let bp = &params.blocks[l][b];
                let g = &mut grads.blocks[l][b];

                // total gradient on this block's new hidden state
                let mut d_h: Vec<f64> = d_out[b * units..(b + 1) * units].to_vec();
                add_scaled(&mut d_h, &d_carry[l][b]);

                // h' = (1 - z) . h + z . c
                let d_z: Vec<f64> = d_h
                    .iter()
                    .zip(&act.cand)
                    .zip(h_prev)
                    .map(|((d, c), h)| d * (c - h))
                    .collect();
                let d_c: Vec<f64> = d_h.iter().zip(&act.update).map(|(d, z)| d * z).collect();
                let mut d_h_prev: Vec<f64> = d_h
                    .iter()
                    .zip(&act.update)
                    .map(|(d, z)| d * (1.0 - z))
                    .collect();

                // candidate: c = tanh(a_c), a_c = Wc in + Uc (r.h) + bc
                let d_ac: Vec<f64> = d_c
                    .iter()
                    .zip(&act.cand)
                    .map(|(d, c)| d * (1.0 - c * c))
                    .collect();
                let gated: Vec<f64> = act.reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
                outer_add(&mut g.w_cand, &d_ac, input);
                outer_add(&mut g.u_cand, &d_ac, &gated);
                add_scaled(&mut g.b_cand, &d_ac);
                let mut d_gated = vec![0.0; units];
                super::matvec_t_add(&bp.u_cand, units, units, &d_ac, &mut d_gated);
                let d_r: Vec<f64> = d_gated.iter().zip(h_prev).map(|(d, h)| d * h).collect();
                for ((dh, dg), r) in d_h_prev.iter_mut().zip(&d_gated).zip(&act.reset) {
                    *dh += dg * r;
                }

                // reset gate: r = sigmoid(a_r)
                let d_ar: Vec<f64> = d_r
                    .iter()
                    .zip(&act.reset)
                    .map(|(d, r)| d * r * (1.0 - r))
                    .collect();
                outer_add(&mut g.w_reset, &d_ar, input);
                outer_add(&mut g.u_reset, &d_ar, h_prev);
                add_scaled(&mut g.b_reset, &d_ar);
                super::matvec_t_add(&bp.u_reset, units, units, &d_ar, &mut d_h_prev);

                // update gate: z = sigmoid(a_z)
                let d_az: Vec<f64> = d_z
                    .iter()
                    .zip(&act.update)
                    .map(|(d, z)| d * z * (1.0 - z))
                    .collect();
                outer_add(&mut g.w_update, &d_az, input);
                outer_add(&mut g.u_update, &d_az, h_prev);
                add_scaled(&mut g.b_update, &d_az);
                super::matvec_t_add(&bp.u_update, units, units, &d_az, &mut d_h_prev);

                // gradient reaching this layer's input
                super::matvec_t_add(&bp.w_update, units, in_dim, &d_az, &mut d_input);
                super::matvec_t_add(&bp.w_reset, units, in_dim, &d_ar, &mut d_input);
                super::matvec_t_add(&bp.w_cand, units, in_dim, &d_ac, &mut d_input);

                d_carry[l][b] = d_h_prev;
            }
            d_out = d_input;
        }
        // d_out now holds the one-hot input gradient; discarded. The
        // carry left after t = 0 is the truncated initial-state term.
    }

    Ok(BackwardPass {
        grads,
        loss: CrossEntropyLoss {
            nats_per_char: total_nll * scale,
            clamped_steps: clamped,
        },
        final_state: current,
    })
}
