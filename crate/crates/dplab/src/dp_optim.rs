//! Private and non-private training loops over adapter models.
//!
//! The private path is momentum SGD over noisy clipped gradient sums:
//! each step draws a Poisson lot (every example included independently with
//! the sampling rate), clips each per-example gradient to the clip norm,
//! sums, adds per-coordinate Gaussian noise scaled by `sigma * clip_norm`,
//! and normalizes by the expected lot size, never by the realized batch
//! size, which would leak membership. An empty lot still performs a
//! noise-only step.
//!
//! The noise multiplier is calibrated up front against the total number of
//! planned steps, so stopping early only ever reduces the spent budget; the
//! transcript records the budget actually consumed by the executed steps.
//!
//! The non-private path is either plain momentum SGD or AdamW with decoupled
//! weight decay and a per-epoch cosine learning-rate factor.
//!
//! Both paths evaluate validation loss once per epoch, stop after `patience`
//! consecutive epochs without strict improvement, and restore the best
//! parameters seen. Every training transcript counts how many real examples
//! the loop touched, which lets downstream checks prove that models trained
//! on synthetic data never read a real record.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::accountant::{self, PrivacyBudget};
use crate::corpus::LabeledDoc;
use crate::error::{Error, Result};
use crate::model::{self, LossSpec, ModelParams};
use crate::stream;

/// Tolerance factor on the post-clip norm check: anything above
/// `clip_norm * (1 + CLIP_SLACK)` counts as a clipping violation.
pub const CLIP_SLACK: f64 = 1e-12;

/// One split of training data. `teacher_logits`, when present, holds one
/// logit vector per document and enables the distillation objective.
/// `is_real` marks splits of real (non-synthetic) records so reads of them
/// can be counted.
pub struct DataSplit<'a> {
    pub docs: &'a [LabeledDoc],
    pub teacher_logits: Option<&'a [Vec<f64>]>,
    pub is_real: bool,
}

impl<'a> DataSplit<'a> {
    pub fn real(docs: &'a [LabeledDoc]) -> Self {
        DataSplit {
            docs,
            teacher_logits: None,
            is_real: true,
        }
    }

    pub fn synthetic(docs: &'a [LabeledDoc]) -> Self {
        DataSplit {
            docs,
            teacher_logits: None,
            is_real: false,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let Some(t) = self.teacher_logits {
            if t.len() != self.docs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{name} split has {} docs but {} teacher logit vectors",
                    self.docs.len(),
                    t.len()
                )));
            }
        }
        Ok(())
    }

    fn teacher_for(&self, idx: usize) -> Option<&'a Vec<f64>> {
        self.teacher_logits.map(|t| &t[idx])
    }
}

/// Loss to optimize; per-example targets come from the documents themselves
/// (and from the split's teacher logits for distillation).
#[derive(Debug, Clone)]
pub enum TrainObjective {
    WeightedBce { weights: Vec<f64> },
    GeneratorXent,
    Distillation { hard_weight: f64, weights: Vec<f64> },
}

fn loss_spec<'a>(
    objective: &'a TrainObjective,
    teacher: Option<&'a Vec<f64>>,
) -> Result<LossSpec<'a>> {
    match objective {
        TrainObjective::WeightedBce { weights } => Ok(LossSpec::WeightedBce { weights }),
        TrainObjective::GeneratorXent => Ok(LossSpec::GeneratorXent),
        TrainObjective::Distillation {
            hard_weight,
            weights,
        } => {
            let teacher_logits = teacher.ok_or_else(|| {
                Error::InvalidInput("distillation objective without teacher logits".into())
            })?;
            Ok(LossSpec::Distillation {
                teacher_logits,
                hard_weight: *hard_weight,
                weights,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    MomentumSgd { momentum: f64 },
    AdamWCosine { weight_decay: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: u32,
    pub patience: u32,
    pub sampling_rate: f64,
    /// When set, replaces the calibrated noise multiplier. Accounting is
    /// voided: the transcript records no achieved budget. Zero disables the
    /// mechanism entirely, which turns the loop into full-batch momentum SGD
    /// when the sampling rate is 1 and the clip norm is infinite.
    #[serde(default)]
    pub noise_override: Option<f64>,
}

impl DpTrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::InvalidConfig(
                "sampling_rate must lie in (0, 1]".into(),
            ));
        }
        if let Some(s) = self.noise_override {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::InvalidConfig(
                    "noise_override must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonPrivateTrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: u32,
    pub patience: u32,
}

impl NonPrivateTrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and nonnegative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        match self.optimizer {
            Optimizer::MomentumSgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
                }
            }
            Optimizer::AdamWCosine { weight_decay } => {
                if !weight_decay.is_finite() || weight_decay < 0.0 {
                    return Err(Error::InvalidConfig(
                        "weight_decay must be finite and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Everything a training run did, for audits and downstream checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTranscript {
    pub steps_planned: u64,
    pub steps_executed: u64,
    pub epochs_run: u32,
    /// 1-based epoch whose parameters were restored; None without validation.
    pub best_epoch: Option<u32>,
    pub epoch_val_loss: Vec<f64>,
    pub noise_multiplier: Option<f64>,
    pub clip_norm: Option<f64>,
    pub sampling_rate: Option<f64>,
    pub target_epsilon: Option<f64>,
    pub target_delta: Option<f64>,
    pub achieved_epsilon: Option<f64>,
    pub achieved_delta: Option<f64>,
    /// Post-clip gradients whose norm exceeded the clip norm beyond slack.
    pub clip_violations: u64,
    /// Real (non-synthetic) examples touched while training, across the
    /// training and validation splits.
    pub real_examples_read: u64,
}

/// Tracks validation loss and signals when `patience` consecutive epochs
/// fail to strictly improve on the best loss seen.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: u32,
    next_index: u32,
    best_index: Option<u32>,
    best_loss: f64,
    streak: u32,
}

impl EarlyStopper {
    pub fn new(patience: u32) -> Self {
        EarlyStopper {
            patience,
            next_index: 0,
            best_index: None,
            best_loss: f64::INFINITY,
            streak: 0,
        }
    }

    /// Records one epoch's validation loss; returns whether it strictly
    /// improved on the best seen so far.
    pub fn observe(&mut self, loss: f64) -> bool {
        let idx = self.next_index;
        self.next_index += 1;
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_index = Some(idx);
            self.streak = 0;
            true
        } else {
            self.streak += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.streak >= self.patience
    }

    /// 0-based index of the best epoch observed.
    pub fn best_index(&self) -> Option<u32> {
        self.best_index
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scales `grad` down to `clip_norm` when it is longer; returns the pre-clip
/// norm. An infinite clip norm leaves the gradient untouched.
pub fn clip_in_place(grad: &mut [f64], clip_norm: f64) -> f64 {
    let norm = l2_norm(grad);
    if norm > clip_norm {
        let factor = clip_norm / norm;
        for g in grad.iter_mut() {
            *g *= factor;
        }
    }
    norm
}

/// Adds independent `N(0, std^2)` noise to every coordinate.
pub fn add_gaussian_noise(v: &mut [f64], std: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if std == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::InvalidConfig(format!("noise std {std}: {e}")))?;
    for slot in v.iter_mut() {
        *slot += normal.sample(rng);
    }
    Ok(())
}

/// Per-epoch learning-rate factor of the cosine schedule: 1 at epoch 0,
/// falling to near zero as `epoch` approaches `max_epochs`.
pub fn cosine_lr_factor(epoch: u32, max_epochs: u32) -> f64 {
    0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / max_epochs as f64).cos())
}

fn mean_loss(params: &ModelParams, split: &DataSplit, objective: &TrainObjective) -> Result<f64> {
    let mut total = 0.0;
    for (i, doc) in split.docs.iter().enumerate() {
        let spec = loss_spec(objective, split.teacher_for(i))?;
        total += model::example_loss(params, doc, &spec)?;
    }
    Ok(total / split.docs.len() as f64)
}

struct EpochLoop {
    stopper: EarlyStopper,
    best: Option<Vec<f64>>,
    epoch_val_loss: Vec<f64>,
}

impl EpochLoop {
    fn new(patience: u32) -> Self {
        EpochLoop {
            stopper: EarlyStopper::new(patience),
            best: None,
            epoch_val_loss: Vec::new(),
        }
    }

    /// Evaluates the validation split after an epoch; returns true when
    /// training should stop. With an empty validation split, training always
    /// runs to max_epochs and keeps the final parameters.
    fn end_epoch(
        &mut self,
        params: &ModelParams,
        val: &DataSplit,
        objective: &TrainObjective,
        reads: &mut u64,
    ) -> Result<bool> {
        if val.docs.is_empty() {
            return Ok(false);
        }
        let loss = mean_loss(params, val, objective)?;
        if val.is_real {
            *reads += val.docs.len() as u64;
        }
        self.epoch_val_loss.push(loss);
        if self.stopper.observe(loss) {
            self.best = Some(model::flatten_trainable(params));
        }
        Ok(self.stopper.should_stop())
    }

    /// Restores the best snapshot; returns the 1-based best epoch and the
    /// recorded per-epoch validation losses.
    fn finish(self, params: &mut ModelParams) -> Result<(Option<u32>, Vec<f64>)> {
        if let Some(flat) = self.best {
            model::set_trainable(params, &flat)?;
        }
        Ok((self.stopper.best_index().map(|i| i + 1), self.epoch_val_loss))
    }
}

/// Trains `params` privately with momentum SGD over noisy clipped gradient
/// sums. The noise multiplier is calibrated so that running all planned
/// steps spends at most `budget`; the transcript records what the executed
/// steps actually consumed.
pub fn train_dp(
    params: &mut ModelParams,
    train: &DataSplit,
    val: &DataSplit,
    objective: &TrainObjective,
    budget: &PrivacyBudget,
    cfg: &DpTrainConfig,
    clip_norm: f64,
    seed: u64,
) -> Result<TrainingTranscript> {
    budget.validate()?;
    cfg.validate()?;
    train.validate("training")?;
    val.validate("validation")?;
    if train.docs.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    if !(clip_norm > 0.0) {
        return Err(Error::InvalidConfig("clip_norm must be positive".into()));
    }

    let q = cfg.sampling_rate;
    let steps_per_epoch = (1.0 / q).ceil() as u64;
    let steps_planned = cfg.max_epochs as u64 * steps_per_epoch;
    let sigma = match cfg.noise_override {
        Some(s) => s,
        None => accountant::calibrate_noise(budget, q, steps_planned)?,
    };
    if sigma > 0.0 && !clip_norm.is_finite() {
        return Err(Error::InvalidConfig(
            "positive noise with an infinite clip norm".into(),
        ));
    }
    // guard against 0 * inf when the mechanism is switched off entirely
    let noise_std = if sigma == 0.0 { 0.0 } else { sigma * clip_norm };

    let dim = model::trainable_len(params);
    let mut theta = model::flatten_trainable(params);
    let mut grad = vec![0.0; dim];
    let mut sum = vec![0.0; dim];
    let mut velocity = vec![0.0; dim];
    let mut batch_rng = stream::rng_from(stream::mix_str(seed, "dp-batch"));
    let mut noise_rng = stream::rng_from(stream::mix_str(seed, "dp-noise"));
    let expected_lot = q * train.docs.len() as f64;
    let violation_bound = clip_norm * (1.0 + CLIP_SLACK);

    let mut epochs = EpochLoop::new(cfg.patience);
    let mut real_reads = 0u64;
    let mut clip_violations = 0u64;
    let mut steps_executed = 0u64;
    let mut epochs_run = 0u32;

    'training: for _epoch in 0..cfg.max_epochs {
        for _ in 0..steps_per_epoch {
            sum.fill(0.0);
            for (i, doc) in train.docs.iter().enumerate() {
                if !batch_rng.gen_bool(q) {
                    continue;
                }
                let spec = loss_spec(objective, train.teacher_for(i))?;
                model::per_example_gradient_into(params, doc, &spec, &mut grad)?;
                if train.is_real {
                    real_reads += 1;
                }
                clip_in_place(&mut grad, clip_norm);
                if l2_norm(&grad) > violation_bound {
                    clip_violations += 1;
                }
                for (s, g) in sum.iter_mut().zip(&grad) {
                    *s += g;
                }
            }
            add_gaussian_noise(&mut sum, noise_std, &mut noise_rng)?;
            // normalize by the expected lot size, never the realized batch
            for ((v, s), t) in velocity.iter_mut().zip(&sum).zip(theta.iter_mut()) {
                *v = cfg.momentum * *v + s / expected_lot;
                *t -= cfg.learning_rate * *v;
            }
            model::set_trainable(params, &theta)?;
            steps_executed += 1;
        }
        epochs_run += 1;
        if epochs.end_epoch(params, val, objective, &mut real_reads)? {
            break 'training;
        }
    }

    let (best_epoch, epoch_val_loss) = epochs.finish(params)?;

    // Accounting over the steps actually executed. An override voids it.
    let (achieved_epsilon, achieved_delta, target_epsilon, target_delta) =
        if cfg.noise_override.is_some() {
            (None, None, None, None)
        } else {
            let (eps, _order) =
                accountant::achieved_epsilon(q, sigma, steps_executed, budget.delta)?;
            if eps > budget.epsilon {
                return Err(Error::Calibration(format!(
                    "spent {eps} exceeds the target {}",
                    budget.epsilon
                )));
            }
            (
                Some(eps),
                Some(budget.delta),
                Some(budget.epsilon),
                Some(budget.delta),
            )
        };

    Ok(TrainingTranscript {
        steps_planned,
        steps_executed,
        epochs_run,
        best_epoch,
        epoch_val_loss,
        noise_multiplier: Some(sigma),
        clip_norm: Some(clip_norm),
        sampling_rate: Some(q),
        target_epsilon,
        target_delta,
        achieved_epsilon,
        achieved_delta,
        clip_violations,
        real_examples_read: real_reads,
    })
}

/// Trains `params` without privacy: shuffled mini-batches under either
/// momentum SGD (constant learning rate) or AdamW with decoupled weight
/// decay and a per-epoch cosine learning-rate factor.
pub fn train_nonprivate(
    params: &mut ModelParams,
    train: &DataSplit,
    val: &DataSplit,
    objective: &TrainObjective,
    cfg: &NonPrivateTrainConfig,
    seed: u64,
) -> Result<TrainingTranscript> {
    cfg.validate()?;
    train.validate("training")?;
    val.validate("validation")?;
    if train.docs.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }

    let dim = model::trainable_len(params);
    let mut theta = model::flatten_trainable(params);
    let mut grad = vec![0.0; dim];
    let mut sum = vec![0.0; dim];
    // momentum SGD state
    let mut velocity = vec![0.0; dim];
    // AdamW state
    let mut adam_m = vec![0.0; dim];
    let mut adam_v = vec![0.0; dim];
    let mut adam_t = 0u64;
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const ADAM_EPS: f64 = 1e-8;

    let mut shuffle_rng = stream::rng_from(stream::mix_str(seed, "shuffle"));
    let mut order: Vec<usize> = (0..train.docs.len()).collect();
    let steps_per_epoch = train.docs.len().div_ceil(cfg.batch_size) as u64;

    let mut epochs = EpochLoop::new(cfg.patience);
    let mut real_reads = 0u64;
    let mut steps_executed = 0u64;
    let mut epochs_run = 0u32;

    'training: for epoch in 0..cfg.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let lr_t = match cfg.optimizer {
            Optimizer::MomentumSgd { .. } => cfg.learning_rate,
            Optimizer::AdamWCosine { .. } => {
                cfg.learning_rate * cosine_lr_factor(epoch, cfg.max_epochs)
            }
        };
        for chunk in order.chunks(cfg.batch_size) {
            sum.fill(0.0);
            for &i in chunk {
                let spec = loss_spec(objective, train.teacher_for(i))?;
                model::per_example_gradient_into(params, &train.docs[i], &spec, &mut grad)?;
                if train.is_real {
                    real_reads += 1;
                }
                for (s, g) in sum.iter_mut().zip(&grad) {
                    *s += g;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            match cfg.optimizer {
                Optimizer::MomentumSgd { momentum } => {
                    for ((v, s), t) in velocity.iter_mut().zip(&sum).zip(theta.iter_mut()) {
                        *v = momentum * *v + s * scale;
                        *t -= lr_t * *v;
                    }
                }
                Optimizer::AdamWCosine { weight_decay } => {
                    adam_t += 1;
                    let bc1 = 1.0 - BETA1.powi(adam_t as i32);
                    let bc2 = 1.0 - BETA2.powi(adam_t as i32);
                    for (((m, v), s), t) in adam_m
                        .iter_mut()
                        .zip(adam_v.iter_mut())
                        .zip(&sum)
                        .zip(theta.iter_mut())
                    {
                        let g = s * scale;
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *t -= lr_t * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *t);
                    }
                }
            }
            model::set_trainable(params, &theta)?;
            steps_executed += 1;
        }
        epochs_run += 1;
        if epochs.end_epoch(params, val, objective, &mut real_reads)? {
            break 'training;
        }
    }

    let (best_epoch, epoch_val_loss) = epochs.finish(params)?;

    Ok(TrainingTranscript {
        steps_planned: cfg.max_epochs as u64 * steps_per_epoch,
        steps_executed,
        epochs_run,
        best_epoch,
        epoch_val_loss,
        noise_multiplier: None,
        clip_norm: None,
        sampling_rate: None,
        target_epsilon: None,
        target_delta: None,
        achieved_epsilon: None,
        achieved_delta: None,
        clip_violations: 0,
        real_examples_read: real_reads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelArch, ModelKind};
    use std::collections::BTreeSet;

    fn tiny_arch() -> ModelArch {
        ModelArch {
            kind: ModelKind::Classifier,
            input_dim: 30,
            hidden_dim: 0,
            output_dim: 5,
            lora_rank: 2,
            lora_scale: 8.0,
        }
    }

    fn tiny_docs(n: usize, seed: u64) -> Vec<LabeledDoc> {
        let mut rng = stream::rng_from(seed);
        (0..n)
            .map(|_| {
                let tokens = (0..10).map(|_| rng.gen_range(0..30u32)).collect();
                let mut labels = BTreeSet::new();
                labels.insert(rng.gen_range(0..5u32));
                LabeledDoc { tokens, labels }
            })
            .collect()
    }

    fn bce_objective() -> TrainObjective {
        TrainObjective::WeightedBce {
            weights: vec![1.0; 5],
        }
    }

    #[test]
    fn early_stopper_follows_patience_fixture() {
        let mut s = EarlyStopper::new(3);
        let improvements: Vec<bool> = [1.0, 0.9, 0.95, 0.96, 0.97]
            .iter()
            .map(|&l| s.observe(l))
            .collect();
        assert_eq!(improvements, vec![true, true, false, false, false]);
        assert!(s.should_stop());
        assert_eq!(s.best_index(), Some(1));

        // an improvement resets the streak
        let mut s = EarlyStopper::new(2);
        for &l in &[1.0, 1.1, 0.8, 0.9] {
            s.observe(l);
        }
        assert!(!s.should_stop());
        assert_eq!(s.best_index(), Some(2));
    }

    #[test]
    fn clipping_scales_long_gradients_only() {
        let mut g = vec![3.0, 4.0];
        let pre = clip_in_place(&mut g, 2.0);
        assert_eq!(pre, 5.0);
        assert!((g[0] - 1.2).abs() < 1e-15);
        assert!((g[1] - 1.6).abs() < 1e-15);

        let mut g = vec![0.3, 0.4];
        clip_in_place(&mut g, 2.0);
        assert_eq!(g, vec![0.3, 0.4]); // untouched, bitwise

        let mut g = vec![1e6, -1e6];
        clip_in_place(&mut g, f64::INFINITY);
        assert_eq!(g, vec![1e6, -1e6]);

        let mut g = vec![0.0, 0.0];
        assert_eq!(clip_in_place(&mut g, 1.0), 0.0);
    }

    #[test]
    fn clipped_norm_never_exceeds_bound() {
        let mut rng = stream::rng_from(3);
        for _ in 0..500 {
            let dim = rng.gen_range(1..20);
            let mut g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let clip = rng.gen_range(0.1..10.0);
            let pre = clip_in_place(&mut g, clip);
            let post = l2_norm(&g);
            assert!(post <= clip * (1.0 + CLIP_SLACK) || pre <= clip);
            if pre > clip {
                // direction preserved exactly up to the common factor
                assert!((post - clip).abs() <= clip * 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_noise_has_requested_moments() {
        let mut rng = stream::rng_from(11);
        let std = 1.3;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let n = 100_000;
        let mut buf = [0.0f64; 4];
        for _ in 0..n {
            buf.fill(0.0);
            add_gaussian_noise(&mut buf, std, &mut rng).unwrap();
            for v in buf {
                sum += v;
                sum_sq += v * v;
            }
        }
        let count = (4 * n) as f64;
        let mean = sum / count;
        let var = sum_sq / count - mean * mean;
        assert!(mean.abs() < 0.015, "mean {mean}");
        assert!((var - std * std).abs() < 0.03 * std * std, "var {var}");

        let mut buf = [1.0, 2.0];
        add_gaussian_noise(&mut buf, 0.0, &mut rng).unwrap();
        assert_eq!(buf, [1.0, 2.0]);
    }

    #[test]
    fn cosine_factor_endpoints_and_midpoint() {
        assert!((cosine_lr_factor(0, 10) - 1.0).abs() < 1e-15);
        assert!((cosine_lr_factor(5, 10) - 0.5).abs() < 1e-15);
        assert!(cosine_lr_factor(9, 10) > 0.0);
        assert!(cosine_lr_factor(9, 10) < 0.05);
    }

    /// With the mechanism disabled (no noise, no clipping, sampling rate 1)
    /// the private loop must reproduce full-batch momentum SGD exactly.
    #[test]
    fn mechanism_off_matches_momentum_sgd() {
        let docs = tiny_docs(40, 7);
        let objective = bce_objective();
        let init = init_model(&tiny_arch(), &[], momentum_seed()).unwrap();

        let mut dp_params = init.clone();
        let dp_cfg = DpTrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 20,
            patience: 1000,
            sampling_rate: 1.0,
            noise_override: Some(0.0),
        };
        let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let empty: Vec<LabeledDoc> = Vec::new();
        train_dp(
            &mut dp_params,
            &DataSplit::real(&docs),
            &DataSplit::real(&empty),
            &objective,
            &budget,
            &dp_cfg,
            f64::INFINITY,
            99,
        )
        .unwrap();

        let mut sgd_params = init.clone();
        let np_cfg = NonPrivateTrainConfig {
            optimizer: Optimizer::MomentumSgd { momentum: 0.9 },
            learning_rate: 0.05,
            batch_size: docs.len(),
            max_epochs: 20,
            patience: 1000,
        };
        train_nonprivate(
            &mut sgd_params,
            &DataSplit::real(&docs),
            &DataSplit::real(&empty),
            &objective,
            &np_cfg,
            123,
        )
        .unwrap();

        let a = model::flatten_trainable(&dp_params);
        let b = model::flatten_trainable(&sgd_params);
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-9, "max parameter divergence {max_diff}");
    }

    fn momentum_seed() -> u64 {
        41
    }

    #[test]
    fn dp_training_spends_at_most_the_budget() {
        let docs = tiny_docs(50, 5);
        let val = tiny_docs(10, 6);
        let mut params = init_model(&tiny_arch(), &[], 1).unwrap();
        let cfg = DpTrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 2,
            patience: 3,
            sampling_rate: 0.1,
            noise_override: None,
        };
        let budget = PrivacyBudget::new(4.0, 1e-5).unwrap();
        let t = train_dp(
            &mut params,
            &DataSplit::real(&docs),
            &DataSplit::real(&val),
            &bce_objective(),
            &budget,
            &cfg,
            1.0,
            3,
        )
        .unwrap();
        assert_eq!(t.steps_planned, 20);
        let achieved = t.achieved_epsilon.unwrap();
        assert!(achieved > 0.0 && achieved <= 4.0, "achieved {achieved}");
        assert!(t.noise_multiplier.unwrap() > 0.0);
        assert_eq!(t.clip_violations, 0);
        assert_eq!(t.target_epsilon, Some(4.0));
        assert!(t.real_examples_read > 0);
        assert!(model::flatten_trainable(&params).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_lots_still_step_with_noise_only() {
        let docs = tiny_docs(1, 9);
        let mut params = init_model(&tiny_arch(), &[], 2).unwrap();
        let cfg = DpTrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            max_epochs: 1,
            patience: 3,
            sampling_rate: 0.01,
            noise_override: Some(0.5),
        };
        let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let empty: Vec<LabeledDoc> = Vec::new();
        let t = train_dp(
            &mut params,
            &DataSplit::real(&docs),
            &DataSplit::real(&empty),
            &bce_objective(),
            &budget,
            &cfg,
            1.0,
            4,
        )
        .unwrap();
        assert_eq!(t.steps_executed, 100);
        assert!(t.achieved_epsilon.is_none()); // override voids accounting
        assert!(model::flatten_trainable(&params).iter().all(|v| v.is_finite()));
        // the parameters moved: noise-only steps are real steps
        let fresh = init_model(&tiny_arch(), &[], 2).unwrap();
        assert_ne!(
            model::flatten_trainable(&params),
            model::flatten_trainable(&fresh)
        );
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let docs = tiny_docs(30, 12);
        let val = tiny_docs(8, 13);
        let run = || {
            let mut params = init_model(&tiny_arch(), &[], 5).unwrap();
            let cfg = DpTrainConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                max_epochs: 2,
                patience: 3,
                sampling_rate: 0.2,
                noise_override: None,
            };
            let budget = PrivacyBudget::new(2.0, 1e-5).unwrap();
            let t = train_dp(
                &mut params,
                &DataSplit::real(&docs),
                &DataSplit::real(&val),
                &bce_objective(),
                &budget,
                &cfg,
                1.0,
                77,
            )
            .unwrap();
            (model::flatten_trainable(&params), t)
        };
        let (p1, t1) = run();
        let (p2, t2) = run();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let docs = tiny_docs(10, 20);
        let init = init_model(&tiny_arch(), &[], 8).unwrap();
        let empty: Vec<LabeledDoc> = Vec::new();

        let mut dp = init.clone();
        let cfg = DpTrainConfig {
            learning_rate: 0.0,
            momentum: 0.9,
            max_epochs: 2,
            patience: 3,
            sampling_rate: 0.5,
            noise_override: Some(0.3),
        };
        let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
        train_dp(
            &mut dp,
            &DataSplit::real(&docs),
            &DataSplit::real(&empty),
            &bce_objective(),
            &budget,
            &cfg,
            1.0,
            5,
        )
        .unwrap();
        assert_eq!(model::flatten_trainable(&dp), model::flatten_trainable(&init));

        let mut np = init.clone();
        let cfg = NonPrivateTrainConfig {
            optimizer: Optimizer::AdamWCosine { weight_decay: 0.01 },
            learning_rate: 0.0,
            batch_size: 4,
            max_epochs: 2,
            patience: 3,
        };
        train_nonprivate(
            &mut np,
            &DataSplit::real(&docs),
            &DataSplit::real(&empty),
            &bce_objective(),
            &cfg,
            5,
        )
        .unwrap();
        assert_eq!(model::flatten_trainable(&np), model::flatten_trainable(&init));
    }

    #[test]
    fn adamw_reduces_training_loss() {
        let docs = tiny_docs(40, 30);
        let mut params = init_model(&tiny_arch(), &[], 9).unwrap();
        let objective = bce_objective();
        let split = DataSplit::real(&docs);
        let before = mean_loss(&params, &split, &objective).unwrap();
        let cfg = NonPrivateTrainConfig {
            optimizer: Optimizer::AdamWCosine { weight_decay: 0.01 },
            learning_rate: 0.01,
            batch_size: 8,
            max_epochs: 10,
            patience: 20,
        };
        let empty: Vec<LabeledDoc> = Vec::new();
        train_nonprivate(
            &mut params,
            &split,
            &DataSplit::real(&empty),
            &objective,
            &cfg,
            6,
        )
        .unwrap();
        let after = mean_loss(&params, &split, &objective).unwrap();
        assert!(after < before, "loss went {before} -> {after}");
    }

    #[test]
    fn read_counters_track_real_examples_exactly() {
        let docs = tiny_docs(20, 40);
        let val = tiny_docs(10, 41);
        let cfg = NonPrivateTrainConfig {
            optimizer: Optimizer::MomentumSgd { momentum: 0.9 },
            learning_rate: 0.01,
            batch_size: 7,
            max_epochs: 3,
            patience: 100,
        };
        let mut params = init_model(&tiny_arch(), &[], 3).unwrap();
        let t = train_nonprivate(
            &mut params,
            &DataSplit::real(&docs),
            &DataSplit::real(&val),
            &bce_objective(),
            &cfg,
            8,
        )
        .unwrap();
        assert_eq!(t.epochs_run, 3);
        assert_eq!(t.real_examples_read, 3 * (20 + 10));

        let mut params = init_model(&tiny_arch(), &[], 3).unwrap();
        let t = train_nonprivate(
            &mut params,
            &DataSplit::synthetic(&docs),
            &DataSplit::synthetic(&val),
            &bce_objective(),
            &cfg,
            8,
        )
        .unwrap();
        assert_eq!(t.real_examples_read, 0);
    }

    #[test]
    fn distillation_objective_requires_teacher_logits() {
        let docs = tiny_docs(5, 50);
        let mut params = init_model(&tiny_arch(), &[], 3).unwrap();
        let cfg = NonPrivateTrainConfig {
            optimizer: Optimizer::MomentumSgd { momentum: 0.0 },
            learning_rate: 0.01,
            batch_size: 5,
            max_epochs: 1,
            patience: 1,
        };
        let empty: Vec<LabeledDoc> = Vec::new();
        let err = train_nonprivate(
            &mut params,
            &DataSplit::real(&docs),
            &DataSplit::real(&empty),
            &TrainObjective::Distillation {
                hard_weight: 0.0,
                weights: vec![1.0; 5],
            },
            &cfg,
            8,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = DpTrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 1,
            patience: 1,
            sampling_rate: 0.5,
            noise_override: None,
        };
        for bad in [
            DpTrainConfig {
                sampling_rate: 0.0,
                ..base.clone()
            },
            DpTrainConfig {
                sampling_rate: 1.5,
                ..base.clone()
            },
            DpTrainConfig {
                momentum: 1.0,
                ..base.clone()
            },
            DpTrainConfig {
                patience: 0,
                ..base.clone()
            },
            DpTrainConfig {
                noise_override: Some(-1.0),
                ..base.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(base.validate().is_ok());

        // positive noise requires a finite clip norm
        let docs = tiny_docs(5, 60);
        let mut params = init_model(&tiny_arch(), &[], 3).unwrap();
        let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let empty: Vec<LabeledDoc> = Vec::new();
        let err = train_dp(
            &mut params,
            &DataSplit::real(&docs),
            &DataSplit::real(&empty),
            &bce_objective(),
            &budget,
            &DpTrainConfig {
                noise_override: Some(0.5),
                ..base
            },
            f64::INFINITY,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        // Large learning rate makes validation loss bounce; the transcript's
        // best epoch must hold the smallest recorded loss.
        let docs = tiny_docs(30, 70);
        let val = tiny_docs(10, 71);
        let mut params = init_model(&tiny_arch(), &[], 4).unwrap();
        let cfg = NonPrivateTrainConfig {
            optimizer: Optimizer::MomentumSgd { momentum: 0.9 },
            learning_rate: 0.4,
            batch_size: 5,
            max_epochs: 30,
            patience: 2,
            };
        let t = train_nonprivate(
            &mut params,
            &DataSplit::real(&docs),
            &DataSplit::real(&val),
            &bce_objective(),
            &cfg,
            9,
        )
        .unwrap();
        let best = t.best_epoch.expect("validation ran");
        let best_loss = t.epoch_val_loss[(best - 1) as usize];
        for &l in &t.epoch_val_loss {
            assert!(best_loss <= l);
        }
        if t.epochs_run < cfg.max_epochs {
            // stopped early: the last `patience` epochs did not improve
            assert!(t.epochs_run >= best + cfg.patience);
        }
    }
}
