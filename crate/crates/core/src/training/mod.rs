//! Loss, exact gradients, Adam updates, checkpoints and alignment
//! diagnostics.

mod alignment;
mod checkpoint;
mod gradcheck;
mod log;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    param_schema, AttentionAlignment, BatchStats, ForwardOutput, Graph, ModelConfig, ModelError, ModelParams,
};
use crate::signal::SignalConfig;

pub use alignment::{alignment_diagonality, export_alignment, read_alignment_csv, DIAGONAL_BAND};
pub use checkpoint::{checkpoint_path, latest_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport, GRADCHECK_FLOOR};
pub use log::TrainingLog;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at step {0}")]
    NonFiniteLoss(u64),
    #[error("{0}")]
    Shape(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{what} fingerprint mismatch: expected {expected:016x}, found {found:016x}")]
    FingerprintMismatch {
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Momentum of the batch-norm running statistics, applied per utterance.
pub const BN_MOMENTUM: f64 = 0.9;
/// Losses kept in a checkpoint.
pub const LOSS_TAIL: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// The rate is multiplied by `lr_decay_rate` every `lr_decay_steps`.
    pub lr_decay_steps: u64,
    pub lr_decay_rate: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub checkpoint_interval: u64,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            lr_decay_steps: 50_000,
            lr_decay_rate: 0.5,
            batch_size: 4,
            max_steps: 500,
            checkpoint_interval: 1000,
            grad_clip_norm: 1.0,
            seed: 1234,
        }
    }
}

impl TrainConfig {
    /// Schedule for the bundled toy corpus.
    pub fn toy() -> Self {
        Self {
            learning_rate: 3e-3,
            checkpoint_interval: 250,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.lr_decay_steps == 0 {
            return bad("lr_decay_steps must be at least 1");
        }
        if !(self.lr_decay_rate > 0.0 && self.lr_decay_rate <= 1.0) {
            return bad("lr_decay_rate must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be at least 1");
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }

    /// Step-decayed learning rate used for update number `step` (0-based).
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        self.learning_rate * self.lr_decay_rate.powi((step / self.lr_decay_steps) as i32)
    }
}

/// One training example: character ids and normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub char_ids: Vec<usize>,
    pub mel: Array2<f64>,
    pub linear: Array2<f64>,
}

impl Sample {
    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let frames = self.mel.nrows();
        if frames == 0 || !frames.is_multiple_of(cfg.reduction_r) || self.linear.nrows() != frames {
            return Err(TrainError::Shape(format!(
                "{}: {} mel and {} linear frames with r = {}",
                self.id,
                frames,
                self.linear.nrows(),
                cfg.reduction_r
            )));
        }
        if self.mel.ncols() != cfg.mel_bands || self.linear.ncols() != cfg.linear_bins {
            return Err(TrainError::Shape(format!(
                "{}: target widths do not match the model",
                self.id
            )));
        }
        Ok(())
    }
}

/// Gradient tensors keyed like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params
                .tensors()
                .iter()
                .map(|(k, v)| (k.clone(), Array2::zeros(v.dim())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Array2<f64>> {
        &self.tensors
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for t in self.tensors.values_mut() {
                t.mapv_inplace(|g| g * scale);
            }
        }
        norm
    }

    fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (k, t) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(k) {
                t.scaled_add(scale, o);
            }
        }
    }
}

fn mae(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(TrainError::Shape(format!(
            "output {:?} vs target {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok((a - b).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// Mean absolute error on mel plus mean absolute error on linear.
pub fn loss(output: &ForwardOutput, mel_target: &Array2<f64>, linear_target: &Array2<f64>) -> Result<f64> {
    Ok(mae(&output.mel_out, mel_target)? + mae(&output.linear_out, linear_target)?)
}

/// Each mean absolute error as a percentage of its target's range
/// (max - min), averaged over mel and linear.
pub fn loss_percentage(output: &ForwardOutput, mel_target: &Array2<f64>, linear_target: &Array2<f64>) -> Result<f64> {
    let range = |t: &Array2<f64>| {
        let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = t.iter().copied().fold(f64::INFINITY, f64::min);
        if max > min {
            max - min
        } else {
            1.0
        }
    };
    let mel = mae(&output.mel_out, mel_target)? / range(mel_target);
    let lin = mae(&output.linear_out, linear_target)? / range(linear_target);
    Ok(100.0 * (mel + lin) / 2.0)
}

/// Result of one differentiated forward pass.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub loss: f64,
    pub gradients: GradientSet,
    pub batch_stats: Vec<BatchStats>,
    pub alignment: AttentionAlignment,
}

/// Teacher-forced forward with batch statistics, then reverse-mode
/// gradients of the loss for every parameter.
pub fn backward(sample: &Sample, params: &ModelParams, cfg: &ModelConfig, dropout_seed: u64) -> Result<BackwardOutput> {
    sample.check(cfg)?;
    let mut g = Graph::new(params, cfg, true, dropout_seed);
    let out = g.forward(&sample.char_ids, Some(&sample.mel))?;
    let mel_loss = g.tape.l1_mean(out.mel, sample.mel.clone());
    let lin_loss = g.tape.l1_mean(out.linear, sample.linear.clone());
    let total = g.tape.add(mel_loss, lin_loss);
    let loss = g.value(total)[[0, 0]];
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss(0));
    }
    let grads = g.tape.backward(total);
    let mut gradients = GradientSet::zeros_like(params);
    for (name, var) in g.tape.named_vars() {
        if let (Some(slot), Some(grad)) = (gradients.tensors.get_mut(name), grads.get(*var)) {
            slot.assign(grad);
        }
    }
    let alignment = AttentionAlignment::new(g.alignment(&out.alignment_rows))?;
    Ok(BackwardOutput {
        loss,
        gradients,
        batch_stats: std::mem::take(&mut g.batch_stats),
        alignment,
    })
}

/// Adam first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
    /// Updates applied so far.
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ModelParams, cfg: &ModelConfig) -> Self {
        let zeros: BTreeMap<String, Array2<f64>> = param_schema(cfg)
            .into_iter()
            .filter(|s| s.role.trainable())
            .map(|s| {
                let dim = params.get(&s.name).map_or((s.rows, s.cols), |t| t.dim());
                (s.name, Array2::zeros(dim))
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &GradientSet, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, m) in self.m.iter_mut() {
            let (Some(g), Some(v), Some(p)) = (grads.get(name), self.v.get_mut(name), params.get_mut(name)) else {
                continue;
            };
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub params: ModelParams,
    pub adam: AdamState,
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub signal_fingerprint: u64,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(
        params: ModelParams,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        signal: &SignalConfig,
    ) -> Result<Self> {
        model_cfg.validate()?;
        model_cfg.check_signal(signal)?;
        train_cfg.validate()?;
        Ok(Self {
            step: 0,
            adam: AdamState::new(&params, &model_cfg),
            params,
            model_cfg,
            train_cfg,
            signal_fingerprint: signal.fingerprint(),
            loss_history: Vec::new(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    /// Step number after the update (1-based).
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    /// Diagonality of the first item's alignment.
    pub diagonality: f64,
    pub alignment: AttentionAlignment,
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Dropout stream for item `index` of update `step`.
pub fn dropout_seed(seed: u64, step: u64, index: usize) -> u64 {
    mix(mix(seed ^ mix(step)) ^ index as u64)
}

/// Length-bucketed batch for update `step`: samples are ordered by frame
/// count, cut into contiguous buckets of `batch_size`, and one bucket is
/// drawn from a stream keyed by `(seed, step)`.
pub fn select_batch(samples: &[Sample], batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| (samples[i].frames(), i));
    let buckets: Vec<&[usize]> = order.chunks(batch_size.max(1)).collect();
    if buckets.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed) ^ mix(step.wrapping_add(1)));
    buckets[rng.gen_range(0..buckets.len())].to_vec()
}

/// backward -> average -> global-norm clip -> Adam -> running statistics.
pub fn train_step(state: &mut TrainState, batch: &[&Sample]) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let step = state.step;
    let seed = state.train_cfg.seed;
    let results: Vec<Result<BackwardOutput>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| backward(s, &state.params, &state.model_cfg, dropout_seed(seed, step, i)))
        .collect();
    let mut grads = GradientSet::zeros_like(&state.params);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let mut outputs = Vec::with_capacity(batch.len());
    for r in results {
        let out = r.map_err(|e| match e {
            TrainError::NonFiniteLoss(_) => TrainError::NonFiniteLoss(step + 1),
            e => e,
        })?;
        grads.add_scaled(&out.gradients, scale);
        loss += out.loss * scale;
        outputs.push(out);
    }
    if !loss.is_finite() || grads.tensors.values().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::NonFiniteLoss(step + 1));
    }
    let grad_norm = grads.clip(state.train_cfg.grad_clip_norm);
    let lr = state.train_cfg.learning_rate_at(step);
    state.adam.update(&mut state.params, &grads, lr);
    for out in &outputs {
        Graph::apply_batch_stats(&out.batch_stats, &mut state.params, BN_MOMENTUM);
    }
    state.step += 1;
    state.loss_history.push(loss);
    if state.loss_history.len() > LOSS_TAIL {
        let excess = state.loss_history.len() - LOSS_TAIL;
        state.loss_history.drain(..excess);
    }
    let alignment = outputs.swap_remove(0).alignment;
    Ok(StepReport {
        step: state.step,
        loss,
        grad_norm,
        learning_rate: lr,
        diagonality: alignment_diagonality(&alignment),
        alignment,
    })
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

/// Trains until `state.step == until`, checkpointing every
/// `checkpoint_interval` steps and at the end.
pub fn train(
    state: &mut TrainState,
    samples: &[Sample],
    until: u64,
    outputs: &RunOutputs,
    mut on_step: impl FnMut(&StepReport),
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    for s in samples {
        s.check(&state.model_cfg)?;
    }
    let mut log = match &outputs.log_path {
        Some(p) => Some(TrainingLog::open(p)?),
        None => None,
    };
    let mut trace = Vec::new();
    let started = std::time::Instant::now();
    while state.step < until {
        let idx = select_batch(samples, state.train_cfg.batch_size, state.train_cfg.seed, state.step);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        let report = train_step(state, &batch)?;
        trace.push(report.loss);
        if let Some(log) = log.as_mut() {
            log.append(
                report.step,
                report.loss,
                report.diagonality,
                started.elapsed().as_millis() as u64,
            )?;
        }
        on_step(&report);
        if let Some(dir) = &outputs.checkpoint_dir {
            if state.step.is_multiple_of(state.train_cfg.checkpoint_interval) || state.step == until {
                save_checkpoint(state, &checkpoint_path(dir, state.step))?;
            }
        }
    }
    Ok(trace)
}

/// Pairs cached features with encoded text.
pub fn make_sample(id: &str, char_ids: Vec<usize>, mel: Array2<f64>, linear: Array2<f64>) -> Sample {
    Sample {
        id: id.to_string(),
        char_ids,
        mel,
        linear,
    }
}

pub(crate) fn io_context(path: &Path, e: std::io::Error) -> TrainError {
    TrainError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
