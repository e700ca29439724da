//! Optimization: Adam with warmup and linear decay, global-norm clipping and a
//! deterministic batching scheme. Batches and dropout masks are derived from
//! `(seed, step)` alone, so a run resumed from a checkpoint continues exactly as
//! the uninterrupted run would.

mod subsample;
mod synthetic;

pub use subsample::{format_count, format_percent, subsample_few_shot, Subsample, SubsampleError, SubsampleSpec};
pub use synthetic::{make_synthetic_direction_dataset, SyntheticExample, DIRECTION_PREDICATES, NAME_POOL};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError, ParamStore, PreparedExample};
use crate::tensor::{Tape, Tensor};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training examples")]
    EmptyDataset,
    #[error("non-finite {what} at step {step} (examples {examples:?})")]
    NonFinite { what: &'static str, step: u64, examples: Vec<usize> },
    #[error("optimizer state does not match the parameters: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Segments with relation-aware attention.
    Structured,
    /// Sources linearized into one segment.
    Flattened,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// Random initialization.
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate.
    pub lr: f64,
    /// Warmup steps; `None` means 10% of `steps`.
    pub warmup: Option<usize>,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub eval_interval: usize,
    pub variant: Variant,
    pub init: InitKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            lr: 3e-4,
            warmup: None,
            grad_clip: 1.0,
            eval_interval: 100,
            variant: Variant::Structured,
            init: InitKind::Scratch,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn warmup_steps(&self) -> usize {
        self.warmup.unwrap_or(self.steps / 10)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(TrainError::Config(String::from("steps, batch_size and eval_interval must be positive")));
        }
        if self.warmup_steps() > self.steps {
            return Err(TrainError::Config(format!("warmup {} exceeds steps {}", self.warmup_steps(), self.steps)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.grad_clip < 0.0 {
            return Err(TrainError::Config(String::from("lr must be positive and grad_clip non-negative")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(TrainError::Config(String::from("betas must lie in [0, 1) and eps be positive")));
        }
        Ok(())
    }

    /// Learning rate for 0-based step `step`: linear warmup to the peak over
    /// `warmup` steps, then linear decay towards zero at `steps`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let warmup = self.warmup_steps();
        if step < warmup {
            return self.lr * (step + 1) as f64 / warmup as f64;
        }
        let remaining = self.steps.saturating_sub(step) as f64;
        let span = (self.steps - warmup).max(1) as f64;
        self.lr * (remaining / span).clamp(0.0, 1.0)
    }
}

/// Adam moments for every parameter plus the number of completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState { step: 0, m: zeros(), v: zeros() }
    }

    pub fn check(&self, params: &ParamStore<S>) -> Result<(), TrainError> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(TrainError::StateMismatch(format!("{} moments for {} parameters", self.m.len(), params.len())));
        }
        for ((m, v), (name, p)) in self.m.iter().zip(&self.v).zip(params.iter()) {
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(TrainError::StateMismatch(format!("moment shape for `{name}`")));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: &mut ParamStore<S>, grads: &[Vec<S>], lr: f64, config: &TrainConfig) {
        self.step += 1;
        let t = self.step as f64;
        let b1 = S::from_f64(config.beta1);
        let b2 = S::from_f64(config.beta2);
        let c1 = S::from_f64(1.0 - config.beta1);
        let c2 = S::from_f64(1.0 - config.beta2);
        let bc1 = S::from_f64(1.0 - libm::pow(config.beta1, t));
        let bc2 = S::from_f64(1.0 - libm::pow(config.beta2, t));
        let lr = S::from_f64(lr);
        let eps = S::from_f64(config.eps);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of the gradients.
pub fn global_norm<S: Real>(grads: &[Vec<S>]) -> f64 {
    libm::sqrt(grads.iter().flatten().map(|g| g.to_f64() * g.to_f64()).sum())
}

/// Rescales the gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<S: Real>(grads: &mut [Vec<S>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let k = S::from_f64(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

/// SplitMix64 finalizer used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    mix(mix(mix(seed) ^ domain) ^ index)
}

const BATCH_DOMAIN: u64 = 1;
const DROPOUT_DOMAIN: u64 = 2;

/// Example indices for 0-based step `step`: examples are visited epoch by epoch,
/// each epoch in a fresh permutation seeded by `(seed, epoch)`.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for i in 0..batch_size as u64 {
        let global = step * batch_size as u64 + i;
        let epoch = global / n as u64;
        let within = (global % n as u64) as usize;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, BATCH_DOMAIN, epoch)));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("set above").1[within]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Number of completed updates after this step.
    pub step: u64,
    /// Mean loss per target token over the batch.
    pub loss: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub tokens: usize,
}

/// Token-weighted mean loss over examples in eval mode, with the loss sum and
/// token count.
pub fn evaluate_loss<S: Real>(model: &Model<S>, examples: &[PreparedExample]) -> Result<(f64, usize), TrainError> {
    let mut total = 0.0;
    let mut tokens = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for ex in examples {
        if ex.target_ids.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let b = model.bind_frozen(&mut tape);
        let out = model.forward(&mut tape, &b, ex, false, &mut rng)?;
        let logits = out.logits.expect("targets present");
        let loss = model.loss(&mut tape, logits, &ex.target_ids)?;
        total += tape.value(loss).item().to_f64() * ex.target_ids.len() as f64;
        tokens += ex.target_ids.len();
    }
    Ok((if tokens == 0 { 0.0 } else { total / tokens as f64 }, tokens))
}

/// Owns the model and optimizer state during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<S> {
    pub model: Model<S>,
    pub optimizer: OptimizerState<S>,
    pub config: TrainConfig,
    pub seed: u64,
}

impl<S: Real> Trainer<S> {
    pub fn new(model: Model<S>, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let optimizer = OptimizerState::new(model.params());
        Ok(Trainer { model, optimizer, config, seed })
    }

    /// Continues from saved state.
    pub fn resume(
        model: Model<S>,
        optimizer: OptimizerState<S>,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        optimizer.check(model.params())?;
        Ok(Trainer { model, optimizer, config, seed })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn is_done(&self) -> bool {
        self.optimizer.step >= self.config.steps as u64
    }

    /// Runs the next update on the batch selected for the current step.
    pub fn train_step(&mut self, examples: &[PreparedExample]) -> Result<StepReport, TrainError> {
        if examples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let step = self.optimizer.step;
        let batch = batch_indices(self.seed, step, self.config.batch_size, examples.len());
        let (loss, mut grads, tokens) = self.batch_gradients(examples, &batch, step)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { what: "loss", step, examples: batch });
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { what: "gradient", step, examples: batch });
        }
        let grad_norm = clip_global_norm(&mut grads, self.config.grad_clip);
        let lr = self.config.learning_rate(step as usize);
        self.optimizer.update(self.model.params_mut(), &grads, lr, &self.config);
        Ok(StepReport { step: self.optimizer.step, loss, lr, grad_norm, tokens })
    }

    /// Loss (total NLL over total target tokens) and its gradients for a batch.
    /// Examples are run one by one on a shared tape, so no padding is needed.
    pub fn batch_gradients(
        &self,
        examples: &[PreparedExample],
        batch: &[usize],
        step: u64,
    ) -> Result<(f64, Vec<Vec<S>>, usize), TrainError> {
        let tokens: usize = batch.iter().map(|&i| examples[i].target_ids.len()).sum();
        let mut tape = Tape::new();
        let b = self.model.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, DROPOUT_DOMAIN, step));
        let mut parts = Vec::with_capacity(batch.len());
        for &i in batch {
            let ex = &examples[i];
            let Some(logits) = self.model.forward(&mut tape, &b, ex, true, &mut rng)?.logits else {
                continue;
            };
            let mean = self.model.loss(&mut tape, logits, &ex.target_ids)?;
            parts.push(tape.scale(mean, S::from_f64(ex.target_ids.len() as f64 / tokens as f64)));
        }
        if parts.is_empty() {
            let zeros = self.model.params().tensors().iter().map(|t| alloc::vec![S::ZERO; t.numel()]).collect();
            return Ok((0.0, zeros, 0));
        }
        let mut loss = parts[0];
        for &p in &parts[1..] {
            loss = tape.add(loss, p).map_err(ModelError::from)?;
        }
        let value = tape.value(loss).item().to_f64();
        let mut g = tape.backward(loss).map_err(ModelError::from)?;
        let grads = b
            .vars()
            .iter()
            .zip(self.model.params().tensors())
            .map(|(&v, t)| g.take(v).unwrap_or_else(|| alloc::vec![S::ZERO; t.numel()]))
            .collect();
        Ok((value, grads, tokens))
    }
}
