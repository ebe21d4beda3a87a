//! The character-level GRU stack: forward pass, logits, softmax,
//! cross-entropy, truncated-BPTT gradients, training, and checkpoints.
//!
//! A layer is divided into independent blocks; each block is a square
//! GRU cell over its own hidden vector, and block outputs are
//! concatenated to form the layer output that feeds the next layer.
//! The top layer output `y` maps to logits via `y * W + b`.
//!
//! Parameters are held as `f64` for numerically clean gradients but are
//! always kept exactly representable as `f32` (enforced at init, after
//! every optimizer update, and on load) so that the 32-bit checkpoint
//! format round-trips bitwise.

mod backward;
mod checkpoint;
mod train;

pub use backward::{backward, BackwardPass};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{train, AdamState, TrainOptions, TrainOutcome, Trainer};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{one_hot, Vocabulary};
use crate::{Error, Result};

/// Probability floor applied inside logarithms to avoid -inf.
pub const PROB_FLOOR: f64 = 1e-12;

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub blocks_per_layer: usize,
    pub units_per_block: usize,
    /// Truncation window for backpropagation through time.
    pub bptt_window: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: 2 layers x 1 block x 128 units, window 64.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            layers: 2,
            blocks_per_layer: 1,
            units_per_block: 128,
            bptt_window: 64,
            learning_rate: 1e-3,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("layers", self.layers),
            ("blocks_per_layer", self.blocks_per_layer),
            ("units_per_block", self.units_per_block),
            ("bptt_window", self.bptt_window),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Width of the input consumed by blocks of layer `l`.
    fn layer_input_width(&self, l: usize) -> usize {
        if l == 0 {
            self.vocab_size
        } else {
            self.blocks_per_layer * self.units_per_block
        }
    }

    /// Width of every layer's concatenated block output.
    pub fn layer_output_width(&self) -> usize {
        self.blocks_per_layer * self.units_per_block
    }
}

/// Weights of one GRU block: update gate, reset gate, and candidate,
/// each with input weights, recurrent weights, and a bias.
///
/// Matrices are row-major `[units x in_dim]` (input) and
/// `[units x units]` (recurrent).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w_update: Vec<f64>,
    pub u_update: Vec<f64>,
    pub b_update: Vec<f64>,
    pub w_reset: Vec<f64>,
    pub u_reset: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub w_cand: Vec<f64>,
    pub u_cand: Vec<f64>,
    pub b_cand: Vec<f64>,
}

impl BlockParams {
    fn zeros(units: usize, in_dim: usize) -> Self {
        Self {
            w_update: vec![0.0; units * in_dim],
            u_update: vec![0.0; units * units],
            b_update: vec![0.0; units],
            w_reset: vec![0.0; units * in_dim],
            u_reset: vec![0.0; units * units],
            b_reset: vec![0.0; units],
            w_cand: vec![0.0; units * in_dim],
            u_cand: vec![0.0; units * units],
            b_cand: vec![0.0; units],
        }
    }
}

/// All model parameters: per-(layer, block) GRU weights plus the output
/// projection `proj_w` (`[top_width x vocab_size]`, row-major) and bias
/// `proj_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocab_size: usize,
    pub layers: usize,
    pub blocks_per_layer: usize,
    pub units_per_block: usize,
    /// `blocks[layer][block]`
    pub blocks: Vec<Vec<BlockParams>>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters with the shape demanded by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let blocks = (0..config.layers)
            .map(|l| {
                let in_dim = config.layer_input_width(l);
                (0..config.blocks_per_layer)
                    .map(|_| BlockParams::zeros(config.units_per_block, in_dim))
                    .collect()
            })
            .collect();
        Self {
            vocab_size: config.vocab_size,
            layers: config.layers,
            blocks_per_layer: config.blocks_per_layer,
            units_per_block: config.units_per_block,
            blocks,
            proj_w: vec![0.0; config.layer_output_width() * config.vocab_size],
            proj_b: vec![0.0; config.vocab_size],
        }
    }

    pub fn top_width(&self) -> usize {
        self.blocks_per_layer * self.units_per_block
    }

    fn layer_input_width(&self, l: usize) -> usize {
        if l == 0 {
            self.vocab_size
        } else {
            self.top_width()
        }
    }

    /// Every parameter tensor in the documented fixed order: for each
    /// layer, for each block, the update/reset/candidate triples
    /// (input weights, recurrent weights, bias), then the output
    /// projection weights and bias. The checkpoint format and the
    /// optimizer both rely on this order.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.blocks {
            for b in layer {
                out.extend([
                    &b.w_update,
                    &b.u_update,
                    &b.b_update,
                    &b.w_reset,
                    &b.u_reset,
                    &b.b_reset,
                    &b.w_cand,
                    &b.u_cand,
                    &b.b_cand,
                ]);
            }
        }
        out.push(&self.proj_w);
        out.push(&self.proj_b);
        out
    }

    /// Mutable view of the tensors, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.blocks {
            for b in layer {
                out.extend([
                    &mut b.w_update,
                    &mut b.u_update,
                    &mut b.b_update,
                    &mut b.w_reset,
                    &mut b.u_reset,
                    &mut b.b_reset,
                    &mut b.w_cand,
                    &mut b.u_cand,
                    &mut b.b_cand,
                ]);
            }
        }
        out.push(&mut self.proj_w);
        out.push(&mut self.proj_b);
        out
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Round every parameter through `f32`. Keeps the in-memory values
/// exactly representable in the 32-bit checkpoint format.
pub(crate) fn quantize_params(params: &mut ModelParams) {
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

/// Draw initial parameters: weights uniform in `+-1/sqrt(fan_in)`,
/// biases zero. Deterministic for a given `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros(config);
    let units = config.units_per_block;
    for l in 0..config.layers {
        let in_dim = config.layer_input_width(l);
        for b in 0..config.blocks_per_layer {
            let block = &mut params.blocks[l][b];
            fill_uniform(&mut rng, &mut block.w_update, in_dim);
            fill_uniform(&mut rng, &mut block.u_update, units);
            fill_uniform(&mut rng, &mut block.w_reset, in_dim);
            fill_uniform(&mut rng, &mut block.u_reset, units);
            fill_uniform(&mut rng, &mut block.w_cand, in_dim);
            fill_uniform(&mut rng, &mut block.u_cand, units);
        }
    }
    let top = config.layer_output_width();
    fill_uniform(&mut rng, &mut params.proj_w, top);
    quantize_params(&mut params);
    Ok(params)
}

fn fill_uniform(rng: &mut ChaCha8Rng, tensor: &mut [f64], fan_in: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in tensor.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

/// Hidden state of the whole stack: one vector per (layer, block).
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    /// `h[layer][block]`, each of length `units_per_block`.
    pub h: Vec<Vec<Vec<f64>>>,
}

impl NetState {
    pub fn zeros(params: &ModelParams) -> Self {
        Self {
            h: vec![vec![vec![0.0; params.units_per_block]; params.blocks_per_layer]; params.layers],
        }
    }

    fn check_shape(&self, params: &ModelParams) -> Result<()> {
        let ok = self.h.len() == params.layers
            && self.h.iter().all(|layer| {
                layer.len() == params.blocks_per_layer
                    && layer.iter().all(|h| h.len() == params.units_per_block)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(
                "state shape does not match model".into(),
            ))
        }
    }
}

/// Output of one time step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub state: NetState,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W * x` for a row-major `[rows x cols]` matrix.
fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] += acc;
    }
}

/// `out += W^T * d` for a row-major `[rows x cols]` matrix.
fn matvec_t_add(w: &[f64], rows: usize, cols: usize, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let dv = d[r];
        for (ov, wv) in out.iter_mut().zip(row) {
            *ov += dv * wv;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Per-block cell activations kept by the cached forward pass.
#[derive(Debug, Clone)]
pub(crate) struct BlockActivation {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub cand: Vec<f64>,
    pub h_new: Vec<f64>,
}

/// Run one step of the full stack and return per-block activations
/// along with the layer inputs, for reuse by the backward pass.
pub(crate) fn step_stack(
    params: &ModelParams,
    x: &[f64],
    state: &NetState,
) -> (Vec<Vec<f64>>, Vec<Vec<BlockActivation>>) {
    let units = params.units_per_block;
    let mut layer_inputs: Vec<Vec<f64>> = Vec::with_capacity(params.layers + 1);
    layer_inputs.push(x.to_vec());
    let mut acts: Vec<Vec<BlockActivation>> = Vec::with_capacity(params.layers);
    for l in 0..params.layers {
        let in_dim = params.layer_input_width(l);
        let input = layer_inputs[l].clone();
        let mut layer_out = Vec::with_capacity(params.top_width());
        let mut layer_acts = Vec::with_capacity(params.blocks_per_layer);
        for b in 0..params.blocks_per_layer {
            let bp = &params.blocks[l][b];
            let h_prev = &state.h[l][b];

            let mut update = bp.b_update.clone();
            matvec_add(&bp.w_update, units, in_dim, &input, &mut update);
            matvec_add(&bp.u_update, units, units, h_prev, &mut update);
            for v in &mut update {
                *v = sigmoid(*v);
            }

            let mut reset = bp.b_reset.clone();
            matvec_add(&bp.w_reset, units, in_dim, &input, &mut reset);
            matvec_add(&bp.u_reset, units, units, h_prev, &mut reset);
            for v in &mut reset {
                *v = sigmoid(*v);
            }

            let gated: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
            let mut cand = bp.b_cand.clone();
            matvec_add(&bp.w_cand, units, in_dim, &input, &mut cand);
            matvec_add(&bp.u_cand, units, units, &gated, &mut cand);
            for v in &mut cand {
                *v = v.tanh();
            }

            // h' = (1 - z) . h + z . h~
            let h_new: Vec<f64> = update
                .iter()
                .zip(&cand)
                .zip(h_prev)
                .map(|((z, c), h)| (1.0 - z) * h + z * c)
                .collect();

            layer_out.extend_from_slice(&h_new);
            layer_acts.push(BlockActivation {
                update,
                reset,
                cand,
                h_new,
            });
        }
        layer_inputs.push(layer_out);
        acts.push(layer_acts);
    }
    (layer_inputs, acts)
}

pub(crate) fn logits_from_top(params: &ModelParams, top: &[f64]) -> Vec<f64> {
    let vocab = params.vocab_size;
    let mut logits = params.proj_b.clone();
    for (k, &y) in top.iter().enumerate() {
        let row = &params.proj_w[k * vocab..(k + 1) * vocab];
        for (lv, wv) in logits.iter_mut().zip(row) {
            *lv += y * wv;
        }
    }
    logits
}

/// One step of the stack on an input vector (normally one-hot).
pub fn gru_step(params: &ModelParams, x: &[f64], state: &NetState) -> Result<StepOutput> {
    if x.len() != params.vocab_size {
        return Err(Error::DimensionMismatch(format!(
            "input length {} does not match vocab size {}",
            x.len(),
            params.vocab_size
        )));
    }
    state.check_shape(params)?;
    let (layer_inputs, acts) = step_stack(params, x, state);
    let logits = logits_from_top(params, layer_inputs.last().unwrap());
    let probs = softmax(&logits);
    let state = NetState {
        h: acts
            .iter()
            .map(|layer| layer.iter().map(|a| a.h_new.clone()).collect())
            .collect(),
    };
    Ok(StepOutput {
        logits,
        probs,
        state,
    })
}

/// Run a sequence of character ids through the stack, returning every
/// per-step output and the final state.
pub fn forward(
    params: &ModelParams,
    seq: &[usize],
    state: &NetState,
) -> Result<(Vec<StepOutput>, NetState)> {
    if seq.is_empty() {
        return Err(Error::InvalidConfig("forward over empty sequence".into()));
    }
    let mut outputs = Vec::with_capacity(seq.len());
    let mut current = state.clone();
    for &id in seq {
        if id >= params.vocab_size {
            return Err(Error::InvalidId {
                id,
                vocab: params.vocab_size,
            });
        }
        let out = gru_step(params, &one_hot(id, params.vocab_size), &current)?;
        current = out.state.clone();
        outputs.push(out);
    }
    Ok((outputs, current))
}

/// Mean negative log-probability of the targets, in nats per character.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropyLoss {
    pub nats_per_char: f64,
    /// Steps where the target probability had to be floored at 1e-12.
    pub clamped_steps: usize,
}

pub fn cross_entropy(step_probs: &[Vec<f64>], targets: &[usize]) -> Result<CrossEntropyLoss> {
    if step_probs.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability vectors vs {} targets",
            step_probs.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::InvalidConfig("cross_entropy over zero steps".into()));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for (probs, &t) in step_probs.iter().zip(targets) {
        let p = *probs.get(t).ok_or(Error::InvalidId {
            id: t,
            vocab: probs.len(),
        })?;
        if p < PROB_FLOOR {
            clamped += 1;
        }
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(CrossEntropyLoss {
        nats_per_char: total / targets.len() as f64,
        clamped_steps: clamped,
    })
}

/// A frozen model: configuration, vocabulary, and parameters, as stored
/// in a checkpoint.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use proptest::prelude::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 3,
            layers: 1,
            blocks_per_layer: 1,
            units_per_block: 4,
            bptt_window: 4,
            learning_rate: 1e-3,
            seed: 7,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_config();
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
    }

    #[test]
    fn init_shapes() {
        let p = init_params(&tiny_config()).unwrap();
        // output projection is top_width x vocab = 4 x 3
        assert_eq!(p.proj_w.len(), 4 * 3);
        assert_eq!(p.proj_b.len(), 3);
        assert_eq!(p.blocks[0][0].w_update.len(), 4 * 3);
        assert_eq!(p.blocks[0][0].u_update.len(), 4 * 4);
        assert!(p.blocks[0][0].b_update.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn paper_scale_config_is_representable() {
        let cfg = ModelConfig {
            vocab_size: 128,
            layers: 3,
            blocks_per_layer: 3,
            units_per_block: 2048,
            bptt_window: 64,
            learning_rate: 1e-3,
            seed: 0,
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.layer_output_width(), 3 * 2048);
    }

    #[test]
    fn init_sampler_mean_near_zero() {
        // 10^4 weights drawn uniform in +-1/sqrt(fan_in); the sample
        // mean should sit within 3 standard errors of zero.
        let cfg = ModelConfig {
            vocab_size: 100,
            layers: 1,
            blocks_per_layer: 1,
            units_per_block: 100,
            bptt_window: 4,
            learning_rate: 1e-3,
            seed: 123,
        };
        let p = init_params(&cfg).unwrap();
        let w = &p.blocks[0][0].w_update; // 100 x 100 = 10^4 samples
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let bound = 1.0 / (100f64).sqrt();
        let sigma = bound / 3f64.sqrt();
        assert!(
            mean.abs() < 3.0 * sigma / n.sqrt(),
            "sampler mean {mean} outside 3 standard errors"
        );
    }

    #[test]
    fn zero_weights_halve_previous_state() {
        // With all-zero weights: z = sigmoid(0) = 0.5, candidate = 0,
        // so h' = 0.5 * h_prev.
        let cfg = tiny_config();
        let params = ModelParams::zeros(&cfg);
        let mut state = NetState::zeros(&params);
        state.h[0][0] = vec![0.8, -0.4, 0.2, 1.0];
        let out = gru_step(&params, &one_hot(0, 3), &state).unwrap();
        for (h, h0) in out.state.h[0][0].iter().zip(&state.h[0][0]) {
            assert!((h - 0.5 * h0).abs() < 1e-15);
        }
        // zero logits -> uniform probabilities
        for p in &out.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_step_matches_scalar_reference() {
        // Independent scalar evaluation of the cell equations for a
        // 2-unit single block, vocab 2.
        let cfg = ModelConfig {
            vocab_size: 2,
            layers: 1,
            blocks_per_layer: 1,
            units_per_block: 2,
            bptt_window: 2,
            learning_rate: 1e-3,
            seed: 99,
        };
        let params = init_params(&cfg).unwrap();
        let mut state = NetState::zeros(&params);
        state.h[0][0] = vec![0.3, -0.6];
        let x = one_hot(1, 2);
        let out = gru_step(&params, &x, &state).unwrap();

        let b = &params.blocks[0][0];
        let h = &state.h[0][0];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let dot2 = |m: &[f64], r: usize, v: &[f64]| m[r * 2] * v[0] + m[r * 2 + 1] * v[1];
        for u in 0..2 {
            let z = sig(dot2(&b.w_update, u, &x) + dot2(&b.u_update, u, h) + b.b_update[u]);
            let r = sig(dot2(&b.w_reset, u, &x) + dot2(&b.u_reset, u, h) + b.b_reset[u]);
            let gated = [
                sig(dot2(&b.w_reset, 0, &x) + dot2(&b.u_reset, 0, h) + b.b_reset[0]) * h[0],
                sig(dot2(&b.w_reset, 1, &x) + dot2(&b.u_reset, 1, h) + b.b_reset[1]) * h[1],
            ];
            let cand =
                (dot2(&b.w_cand, u, &x) + dot2(&b.u_cand, u, &gated) + b.b_cand[u]).tanh();
            let expect = (1.0 - z) * h[u] + z * cand;
            assert!((out.state.h[0][0][u] - expect).abs() < 1e-12, "unit {u}");
            let _ = r;
        }
        // logits = y * W + b
        for v in 0..2 {
            let y = &out.state.h[0][0];
            let expect = y[0] * params.proj_w[v] + y[1] * params.proj_w[2 + v] + params.proj_b[v];
            assert!((out.logits[v] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_single_step_equals_gru_step() {
        let params = init_params(&tiny_config()).unwrap();
        let state = NetState::zeros(&params);
        let (steps, last) = forward(&params, &[2], &state).unwrap();
        let direct = gru_step(&params, &one_hot(2, 3), &state).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].probs, direct.probs);
        assert_eq!(last, direct.state);
    }

    #[test]
    fn forward_chaining_is_bitwise() {
        let params = init_params(&tiny_config()).unwrap();
        let state = NetState::zeros(&params);
        let seq = [0, 1, 2, 1, 0, 2];
        let (full, full_state) = forward(&params, &seq, &state).unwrap();
        let (head, mid) = forward(&params, &seq[..3], &state).unwrap();
        let (tail, tail_state) = forward(&params, &seq[3..], &mid).unwrap();
        assert_eq!(full_state, tail_state);
        for (a, b) in full.iter().zip(head.iter().chain(tail.iter())) {
            assert_eq!(a.probs, b.probs);
            assert_eq!(a.logits, b.logits);
        }
    }

    #[test]
    fn cross_entropy_analytic() {
        let perfect = vec![vec![0.0, 1.0, 0.0]; 4];
        let loss = cross_entropy(&perfect, &[1, 1, 1, 1]).unwrap();
        assert_eq!(loss.nats_per_char, 0.0);

        let uniform = vec![vec![1.0 / 27.0; 27]; 3];
        let loss = cross_entropy(&uniform, &[0, 13, 26]).unwrap();
        assert!((loss.nats_per_char - 27f64.ln()).abs() < 1e-12);

        // hand-summed 3-step case
        let probs = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.25, 0.25, 0.5],
            vec![0.9, 0.05, 0.05],
        ];
        let loss = cross_entropy(&probs, &[0, 2, 1]).unwrap();
        let hand = -(0.7f64.ln() + 0.5f64.ln() + 0.05f64.ln()) / 3.0;
        assert!((loss.nats_per_char - hand).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_floors_zero_probability() {
        let probs = vec![vec![1.0, 0.0]];
        let loss = cross_entropy(&probs, &[1]).unwrap();
        assert_eq!(loss.clamped_steps, 1);
        assert!((loss.nats_per_char - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = init_params(&tiny_config()).unwrap();
        let state = NetState::zeros(&params);
        assert!(matches!(
            gru_step(&params, &[1.0, 0.0], &state),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn checkpoint_vocab_round_trips_through_model() {
        let text = "hello there\nhow are you\n";
        let vocab = build_vocabulary(text).unwrap();
        assert_eq!(vocab.decode(&vocab.encode(text)).unwrap(), text);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax(&logits);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v >= 0.0));

            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn hidden_state_stays_bounded(seq in proptest::collection::vec(0usize..3, 1..40)) {
            let params = init_params(&tiny_config()).unwrap();
            let state = NetState::zeros(&params);
            let (_, last) = forward(&params, &seq, &state).unwrap();
            for layer in &last.h {
                for block in layer {
                    for &h in block {
                        prop_assert!((-1.0..=1.0).contains(&h));
                    }
                }
            }
        }
    }
}
