//! Training: Adam updates over BPTT windows with hidden state carried
//! across consecutive batches and reset at each epoch start.

use crate::corpus::{make_batches, Batch, Vocabulary};
use crate::{Error, Result};

use super::{backward, quantize_params, CrossEntropyLoss, ModelConfig, ModelParams, NetState};

const BETA_1: f64 = 0.9;
const BETA_2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Knobs of the update loop that are not part of the model itself.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    /// Number of optimizer updates to run.
    pub steps: usize,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 1000,
            clip_norm: 5.0,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    /// One Adam update. Gradients are clipped to `clip_norm` (global
    /// L2 norm over all tensors) first; updated parameters are
    /// re-quantized to stay f32-representable.
    pub fn update(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        learning_rate: f64,
        clip_norm: f64,
    ) {
        let tensors = grads.tensors();
        let sq_norm: f64 = tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum();
        let norm = sq_norm.sqrt();
        let clip = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };

        self.t += 1;
        let bc1 = 1.0 - BETA_1.powi(self.t as i32);
        let bc2 = 1.0 - BETA_2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let grad = g[i] * clip;
                m[i] = BETA_1 * m[i] + (1.0 - BETA_1) * grad;
                v[i] = BETA_2 * v[i] + (1.0 - BETA_2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        quantize_params(params);
    }
}

/// Incremental trainer; `step()` runs one batch and returns its loss.
pub struct Trainer {
    config: ModelConfig,
    params: ModelParams,
    batches: Vec<Batch>,
    states: Vec<NetState>,
    adam: AdamState,
    options: TrainOptions,
    cursor: usize,
    steps_done: usize,
}

impl Trainer {
    pub fn new(
        text: &str,
        vocab: &Vocabulary,
        config: &ModelConfig,
        options: TrainOptions,
    ) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "config vocab_size {} does not match vocabulary size {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        if options.batch_size < 1 || options.steps < 1 {
            return Err(Error::InvalidConfig(
                "batch_size and steps must be at least 1".into(),
            ));
        }
        let batches = make_batches(text, vocab, config.bptt_window, options.batch_size)?;
        let params = super::init_params(config)?;
        let states = vec![NetState::zeros(&params); options.batch_size];
        let adam = AdamState::new(&params);
        Ok(Self {
            config: config.clone(),
            params,
            batches,
            states,
            adam,
            options,
            cursor: 0,
            steps_done: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Run one optimizer update over the next batch.
    pub fn step(&mut self) -> Result<f64> {
        if self.cursor == 0 {
            // epoch start: streams restart at the corpus head
            for s in &mut self.states {
                *s = NetState::zeros(&self.params);
            }
        }
        let batch = &self.batches[self.cursor];
        let mut total = CrossEntropyLoss {
            nats_per_char: 0.0,
            clamped_steps: 0,
        };
        let mut summed: Option<ModelParams> = None;
        for (row, state) in self.states.iter_mut().enumerate() {
            let pass = backward(&self.params, &batch.inputs[row], &batch.targets[row], state)?;
            *state = pass.final_state;
            total.nats_per_char += pass.loss.nats_per_char;
            total.clamped_steps += pass.loss.clamped_steps;
            summed = Some(match summed {
                None => pass.grads,
                Some(mut acc) => {
                    for (a, g) in acc.tensors_mut().into_iter().zip(pass.grads.tensors()) {
                        for (av, gv) in a.iter_mut().zip(g) {
                            *av += gv;
                        }
                    }
                    acc
                }
            });
        }
        let mut grads = summed.expect("batch_size >= 1");
        let scale = 1.0 / self.states.len() as f64;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
        let loss = total.nats_per_char * scale;
        if !loss.is_finite() {
            return Err(Error::TrainDiverged {
                step: self.steps_done,
            });
        }
        self.adam.update(
            &mut self.params,
            &grads,
            self.config.learning_rate,
            self.options.clip_norm,
        );
        self.cursor = (self.cursor + 1) % self.batches.len();
        self.steps_done += 1;
        Ok(loss)
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

/// Trained parameters plus the per-batch loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub loss_history: Vec<f64>,
}

/// Train from scratch on `text` for `options.steps` updates.
pub fn train(
    text: &str,
    vocab: &Vocabulary,
    config: &ModelConfig,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    let steps = options.steps;
    let mut trainer = Trainer::new(text, vocab, config, options)?;
    let mut loss_history = Vec::with_capacity(steps);
    for _ in 0..steps {
        loss_history.push(trainer.step()?);
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    fn toy_setup() -> (String, Vocabulary, ModelConfig) {
        let text: String = "abcd".repeat(64);
        let vocab = build_vocabulary(&text).unwrap();
        let config = ModelConfig {
            vocab_size: vocab.len(),
            layers: 1,
            blocks_per_layer: 1,
            units_per_block: 8,
            bptt_window: 8,
            learning_rate: 5e-3,
            seed: 11,
        };
        (text, vocab, config)
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let (text, vocab, mut config) = toy_setup();
        config.learning_rate = 0.0;
        let before = super::super::init_params(&config).unwrap();
        let outcome = train(&text, &vocab, &config, TrainOptions {
            batch_size: 2,
            steps: 5,
            clip_norm: 5.0,
        })
        .unwrap();
        assert_eq!(outcome.params, before);
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let (text, vocab, config) = toy_setup();
        let opts = TrainOptions {
            batch_size: 2,
            steps: 8,
            clip_norm: 5.0,
        };
        let a = train(&text, &vocab, &config, opts.clone()).unwrap();
        let b = train(&text, &vocab, &config, opts).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn loss_decreases_on_periodic_corpus() {
        let (text, vocab, config) = toy_setup();
        let outcome = train(&text, &vocab, &config, TrainOptions {
            batch_size: 2,
            steps: 60,
            clip_norm: 5.0,
        })
        .unwrap();
        let first = outcome.loss_history[0];
        let last = *outcome.loss_history.last().unwrap();
        assert!(
            last < first * 0.5,
            "loss did not drop: first {first}, last {last}"
        );
    }

    #[test]
    fn trained_params_stay_f32_representable() {
        let (text, vocab, config) = toy_setup();
        let outcome = train(&text, &vocab, &config, TrainOptions {
            batch_size: 2,
            steps: 5,
            clip_norm: 5.0,
        })
        .unwrap();
        for t in outcome.params.tensors() {
            for &v in t {
                assert_eq!(v, v as f32 as f64);
            }
        }
    }
}
