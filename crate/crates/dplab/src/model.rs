//! Desk-scale models with frozen bases and low-rank trainable adapters.
//!
//! Every dense layer computes `y = (W0 + (scale/rank) * B * A) x + bias`
//! where `W0` is frozen and only `A`, `B` and `bias` train. `B` starts at
//! zero, so a fresh model computes exactly its base function.
//!
//! Two architectures share this machinery:
//!
//! * classifier: bag-of-token counts -> optional ReLU hidden layer -> one
//!   logit per label (sigmoid activations are applied downstream),
//! * generator: label-indicator vector (normalized by the number of active
//!   labels) -> token logits; always linear.
//!
//! Per-example gradients are exact closed forms so that per-example clipping
//! in the private optimizer is exact rather than approximated.
//!
//! Trainable parameters flatten into one vector in a fixed order that is part
//! of the container format: for each layer from input to output, `A`
//! row-major, then `B` row-major, then `bias`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledDoc;
use crate::error::{Error, Result};
use crate::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Classifier,
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub kind: ModelKind,
    pub input_dim: u32,
    /// 0 means a single linear layer.
    pub hidden_dim: u32,
    pub output_dim: u32,
    pub lora_rank: u32,
    pub lora_scale: f64,
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig(
                "input_dim and output_dim must be positive".into(),
            ));
        }
        if self.lora_rank == 0 {
            return Err(Error::InvalidConfig("lora_rank must be positive".into()));
        }
        if !self.lora_scale.is_finite() || self.lora_scale <= 0.0 {
            return Err(Error::InvalidConfig(
                "lora_scale must be positive and finite".into(),
            ));
        }
        if self.kind == ModelKind::Generator && self.hidden_dim != 0 {
            return Err(Error::InvalidConfig(
                "generator models are linear; hidden_dim must be 0".into(),
            ));
        }
        Ok(())
    }

    /// Adapter-to-base scaling factor.
    pub fn scaling(&self) -> f64 {
        self.lora_scale / self.lora_rank as f64
    }

    /// `(in, out)` dimensions of each layer, input side first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.hidden_dim == 0 {
            vec![(self.input_dim as usize, self.output_dim as usize)]
        } else {
            vec![
                (self.input_dim as usize, self.hidden_dim as usize),
                (self.hidden_dim as usize, self.output_dim as usize),
            ]
        }
    }

    /// Canonical byte serialization of the architecture; identical archs have
    /// identical descriptors.
    pub fn descriptor_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25);
        out.push(match self.kind {
            ModelKind::Classifier => 0u8,
            ModelKind::Generator => 1u8,
        });
        out.extend_from_slice(&self.input_dim.to_le_bytes());
        out.extend_from_slice(&self.hidden_dim.to_le_bytes());
        out.extend_from_slice(&self.output_dim.to_le_bytes());
        out.extend_from_slice(&self.lora_rank.to_le_bytes());
        out.extend_from_slice(&self.lora_scale.to_bits().to_le_bytes());
        out
    }
}

/// One adapted dense layer. `base` is `out x in` row-major and frozen;
/// `a` is `rank x in`, `b` is `out x rank`, both row-major and trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub rank: usize,
    pub base: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AdaptedLayer {
    fn trainable_len(&self) -> usize {
        self.rank * self.in_dim + self.out_dim * self.rank + self.out_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ModelArch,
    pub layers: Vec<AdaptedLayer>,
}

/// Flat per-example gradient over the trainable parameters, in flattening
/// order. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Loss attached to one example. Targets come from the example itself:
/// `WeightedBce` and `Distillation` read the label set, `GeneratorXent`
/// reads the token list (with the label set as conditioning input).
#[derive(Debug, Clone)]
pub enum LossSpec<'a> {
    /// Mean over labels of binary cross-entropy with per-label positive
    /// weights.
    WeightedBce { weights: &'a [f64] },
    /// Cross-entropy between the document's empirical token distribution and
    /// the generator's softmax.
    GeneratorXent,
    /// `hard_weight * weighted BCE + (1 - hard_weight) * mean squared error`
    /// against raw teacher logits.
    Distillation {
        teacher_logits: &'a [f64],
        hard_weight: f64,
        weights: &'a [f64],
    },
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-label positive-class weights `clamp((n_docs - n_j) / n_j, 1, 100)`.
/// Labels that never occur are rejected: their weight would be unbounded and
/// the training split cannot support them.
pub fn positive_class_weights(stats: &crate::corpus::LabelStats) -> Result<Vec<f64>> {
    let n = stats.num_docs as f64;
    stats
        .counts
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            if c == 0 {
                Err(Error::InvalidInput(format!(
                    "label {j} never occurs in the training split"
                )))
            } else {
                Ok(((n - c as f64) / c as f64).clamp(1.0, 100.0))
            }
        })
        .collect()
}

/// Mean over labels of the stabilized weighted binary cross-entropy.
pub fn weighted_bce_loss(
    logits: &[f64],
    positives: &BTreeSet<u32>,
    weights: &[f64],
) -> Result<f64> {
    if logits.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits vs {} weights",
            logits.len(),
            weights.len()
        )));
    }
    let mut total = 0.0;
    for (j, (&z, &w)) in logits.iter().zip(weights).enumerate() {
        if positives.contains(&(j as u32)) {
            total += w * softplus(-z);
        } else {
            total += softplus(z);
        }
    }
    Ok(total / logits.len() as f64)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&u| (u - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&u| (u - max).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Initialize a model. Classifier bases are fixed random projections drawn
/// from the seed; generator bases are the smoothed log-unigram distribution
/// of the (label-free) pretraining documents, broadcast to every input
/// column so that a fresh generator emits the pretraining distribution for
/// any conditioning set. `B` and biases start at zero, `A` starts small.
pub fn init_model(arch: &ModelArch, pretrain_docs: &[Vec<u32>], seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = stream::rng_from(stream::mix_str(seed, "model-init"));
    let mut layers = Vec::new();
    for (in_dim, out_dim) in arch.layer_dims() {
        let rank = arch.lora_rank as usize;
        let base = match arch.kind {
            ModelKind::Classifier => {
                let std = 1.0 / (in_dim as f64).sqrt();
                (0..in_dim * out_dim)
                    .map(|_| std * standard_normal(&mut rng))
                    .collect()
            }
            ModelKind::Generator => {
                if pretrain_docs.is_empty() {
                    return Err(Error::InvalidInput(
                        "generator base requires pretraining documents".into(),
                    ));
                }
                let mut counts = vec![1.0f64; out_dim]; // add-one smoothing
                let mut total = out_dim as f64;
                for doc in pretrain_docs {
                    for &t in doc {
                        if (t as usize) >= out_dim {
                            return Err(Error::InvalidInput(format!(
                                "pretraining token {t} outside vocabulary of size {out_dim}"
                            )));
                        }
                        counts[t as usize] += 1.0;
                        total += 1.0;
                    }
                }
                let log_unigram: Vec<f64> =
                    counts.iter().map(|c| (c / total).ln()).collect();
                let mut base = vec![0.0; in_dim * out_dim];
                for (o, &lu) in log_unigram.iter().enumerate() {
                    for i in 0..in_dim {
                        base[o * in_dim + i] = lu;
                    }
                }
                base
            }
        };
        let a_std = 1.0 / (in_dim as f64).sqrt();
        let a = (0..rank * in_dim)
            .map(|_| a_std * standard_normal(&mut rng))
            .collect();
        layers.push(AdaptedLayer {
            in_dim,
            out_dim,
            rank,
            base,
            a,
            b: vec![0.0; out_dim * rank],
            bias: vec![0.0; out_dim],
        });
    }
    Ok(ModelParams {
        arch: *arch,
        layers,
    })
}

fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Sparse input: (index, value) pairs with strictly increasing indices.
type SparseVec = Vec<(usize, f64)>;

fn bag_of_tokens(doc: &LabeledDoc, input_dim: usize) -> Result<SparseVec> {
    let mut counts = std::collections::BTreeMap::new();
    for &t in &doc.tokens {
        if t as usize >= input_dim {
            return Err(Error::DimensionMismatch(format!(
                "token {t} outside model input dimension {input_dim}"
            )));
        }
        *counts.entry(t as usize).or_insert(0.0) += 1.0;
    }
    Ok(counts.into_iter().collect())
}

fn label_indicator(labels: &BTreeSet<u32>, input_dim: usize) -> Result<SparseVec> {
    if labels.is_empty() {
        return Err(Error::InvalidInput(
            "generator conditioning set is empty".into(),
        ));
    }
    let w = 1.0 / labels.len() as f64;
    labels
        .iter()
        .map(|&l| {
            if l as usize >= input_dim {
                Err(Error::DimensionMismatch(format!(
                    "label {l} outside model input dimension {input_dim}"
                )))
            } else {
                Ok((l as usize, w))
            }
        })
        .collect()
}

/// `A x` for sparse x.
fn adapter_times_sparse(layer: &AdaptedLayer, x: &SparseVec) -> Vec<f64> {
    let mut ax = vec![0.0; layer.rank];
    for &(i, v) in x {
        for r in 0..layer.rank {
            ax[r] += layer.a[r * layer.in_dim + i] * v;
        }
    }
    ax
}

fn layer_forward_sparse(layer: &AdaptedLayer, x: &SparseVec, scaling: f64) -> (Vec<f64>, Vec<f64>) {
    let mut y = layer.bias.clone();
    for &(i, v) in x {
        for o in 0..layer.out_dim {
            y[o] += layer.base[o * layer.in_dim + i] * v;
        }
    }
    let ax = adapter_times_sparse(layer, x);
    for o in 0..layer.out_dim {
        let mut acc = 0.0;
        for r in 0..layer.rank {
            acc += layer.b[o * layer.rank + r] * ax[r];
        }
        y[o] += scaling * acc;
    }
    (y, ax)
}

fn layer_forward_dense(layer: &AdaptedLayer, x: &[f64], scaling: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ax = vec![0.0; layer.rank];
    for r in 0..layer.rank {
        let row = &layer.a[r * layer.in_dim..(r + 1) * layer.in_dim];
        ax[r] = row.iter().zip(x).map(|(a, v)| a * v).sum();
    }
    let mut y = layer.bias.clone();
    for o in 0..layer.out_dim {
        let row = &layer.base[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut acc: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
        let brow = &layer.b[o * layer.rank..(o + 1) * layer.rank];
        acc += scaling * brow.iter().zip(&ax).map(|(b, v)| b * v).sum::<f64>();
        y[o] += acc;
    }
    (y, ax)
}

struct ForwardCache {
    x: SparseVec,
    ax1: Vec<f64>,
    pre_hidden: Option<Vec<f64>>,
    hidden: Option<Vec<f64>>,
    ax2: Option<Vec<f64>>,
    logits: Vec<f64>,
}

fn forward_cached(params: &ModelParams, x: SparseVec) -> ForwardCache {
    let scaling = params.arch.scaling();
    if params.layers.len() == 1 {
        let (logits, ax1) = layer_forward_sparse(&params.layers[0], &x, scaling);
        ForwardCache {
            x,
            ax1,
            pre_hidden: None,
            hidden: None,
            ax2: None,
            logits,
        }
    } else {
        let (pre, ax1) = layer_forward_sparse(&params.layers[0], &x, scaling);
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let (logits, ax2) = layer_forward_dense(&params.layers[1], &hidden, scaling);
        ForwardCache {
            x,
            ax1,
            pre_hidden: Some(pre),
            hidden: Some(hidden),
            ax2: Some(ax2),
            logits,
        }
    }
}

/// Label logits for a document under a classifier model.
pub fn forward_classifier(params: &ModelParams, doc: &LabeledDoc) -> Result<Vec<f64>> {
    if params.arch.kind != ModelKind::Classifier {
        return Err(Error::InvalidInput(
            "forward_classifier called on a non-classifier model".into(),
        ));
    }
    let x = bag_of_tokens(doc, params.arch.input_dim as usize)?;
    Ok(forward_cached(params, x).logits)
}

/// Token logits for a conditioning label set under a generator model.
pub fn forward_generator(params: &ModelParams, labels: &BTreeSet<u32>) -> Result<Vec<f64>> {
    if params.arch.kind != ModelKind::Generator {
        return Err(Error::InvalidInput(
            "forward_generator called on a non-generator model".into(),
        ));
    }
    let x = label_indicator(labels, params.arch.input_dim as usize)?;
    Ok(forward_cached(params, x).logits)
}

// ---------------------------------------------------------------------------
// Losses and per-example gradients
// ---------------------------------------------------------------------------

/// Loss value and gradient of the loss with respect to the logits.
fn loss_and_dz(logits: &[f64], doc: &LabeledDoc, spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    let dim = logits.len();
    match spec {
        LossSpec::WeightedBce { weights } => {
            let loss = weighted_bce_loss(logits, &doc.labels, weights)?;
            let n = dim as f64;
            let dz = logits
                .iter()
                .enumerate()
                .map(|(j, &z)| {
                    if doc.labels.contains(&(j as u32)) {
                        -weights[j] * sigmoid(-z) / n
                    } else {
                        sigmoid(z) / n
                    }
                })
                .collect();
            Ok((loss, dz))
        }
        LossSpec::GeneratorXent => {
            if doc.tokens.is_empty() {
                return Err(Error::InvalidInput(
                    "generator loss over an empty token list".into(),
                ));
            }
            let t = doc.tokens.len() as f64;
            let lse = log_sum_exp(logits);
            let mut dz = softmax(logits);
            let mut target_sum = 0.0;
            for &tok in &doc.tokens {
                let tok = tok as usize;
                if tok >= dim {
                    return Err(Error::DimensionMismatch(format!(
                        "token {tok} outside generator output dimension {dim}"
                    )));
                }
                target_sum += logits[tok];
                dz[tok] -= 1.0 / t;
            }
            Ok((lse - target_sum / t, dz))
        }
        LossSpec::Distillation {
            teacher_logits,
            hard_weight,
            weights,
        } => {
            if teacher_logits.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "{} teacher logits vs {dim} student logits",
                    teacher_logits.len()
                )));
            }
            if !(0.0..=1.0).contains(hard_weight) {
                return Err(Error::InvalidConfig(format!(
                    "hard_weight {hard_weight} outside [0, 1]"
                )));
            }
            let (bce, bce_dz) =
                loss_and_dz(logits, doc, &LossSpec::WeightedBce { weights: *weights })?;
            let n = dim as f64;
            let mse = logits
                .iter()
                .zip(*teacher_logits)
                .map(|(s, t)| (s - t) * (s - t))
                .sum::<f64>()
                / n;
            let loss = hard_weight * bce + (1.0 - hard_weight) * mse;
            let dz = logits
                .iter()
                .zip(*teacher_logits)
                .zip(&bce_dz)
                .map(|((s, t), bd)| hard_weight * bd + (1.0 - hard_weight) * 2.0 * (s - t) / n)
                .collect();
            Ok((loss, dz))
        }
    }
}

/// Loss of one example without the gradient.
pub fn example_loss(params: &ModelParams, doc: &LabeledDoc, spec: &LossSpec) -> Result<f64> {
    let x = input_features(params, doc, spec)?;
    let cache = forward_cached(params, x);
    Ok(loss_and_dz(&cache.logits, doc, spec)?.0)
}

fn input_features(params: &ModelParams, doc: &LabeledDoc, spec: &LossSpec) -> Result<SparseVec> {
    match spec {
        LossSpec::GeneratorXent => label_indicator(&doc.labels, params.arch.input_dim as usize),
        _ => bag_of_tokens(doc, params.arch.input_dim as usize),
    }
}

/// Number of trainable parameters.
pub fn trainable_len(params: &ModelParams) -> usize {
    params.layers.iter().map(AdaptedLayer::trainable_len).sum()
}

/// Exact gradient of the example loss with respect to the flat trainable
/// vector, written into `out` (which must have `trainable_len` entries).
/// Returns the loss.
pub fn per_example_gradient_into(
    params: &ModelParams,
    doc: &LabeledDoc,
    spec: &LossSpec,
    out: &mut [f64],
) -> Result<f64> {
    if out.len() != trainable_len(params) {
        return Err(Error::DimensionMismatch(format!(
            "gradient buffer of {} entries, expected {}",
            out.len(),
            trainable_len(params)
        )));
    }
    out.fill(0.0);
    let scaling = params.arch.scaling();
    let x = input_features(params, doc, spec)?;
    let cache = forward_cached(params, x);
    let (loss, dz) = loss_and_dz(&cache.logits, doc, spec)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss for a document with {} tokens",
            doc.tokens.len()
        )));
    }

    // Split the flat buffer into per-layer trainable blocks.
    let (first_block, second_block) = out.split_at_mut(params.layers[0].trainable_len());

    if params.layers.len() == 1 {
        layer_backward_sparse(&params.layers[0], &cache.x, &cache.ax1, &dz, scaling, first_block);
    } else {
        let hidden = cache.hidden.as_ref().expect("two-layer cache");
        let pre = cache.pre_hidden.as_ref().expect("two-layer cache");
        let ax2 = cache.ax2.as_ref().expect("two-layer cache");
        let l2 = &params.layers[1];
        let d_hidden =
            layer_backward_dense(l2, hidden, ax2, &dz, scaling, second_block);
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(pre)
            .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 })
            .collect();
        layer_backward_sparse(&params.layers[0], &cache.x, &cache.ax1, &d_pre, scaling, first_block);
    }

    if out.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient entry".into()));
    }
    Ok(loss)
}

/// Allocating wrapper around [`per_example_gradient_into`].
pub fn per_example_gradient(
    params: &ModelParams,
    doc: &LabeledDoc,
    spec: &LossSpec,
) -> Result<(f64, GradientVector)> {
    let mut out = vec![0.0; trainable_len(params)];
    let loss = per_example_gradient_into(params, doc, spec, &mut out)?;
    Ok((loss, GradientVector(out)))
}

/// Writes dA, dB, dbias for a sparse-input layer into `block`
/// (layout: A row-major, B row-major, bias).
fn layer_backward_sparse(
    layer: &AdaptedLayer,
    x: &SparseVec,
    ax: &[f64],
    dy: &[f64],
    scaling: f64,
    block: &mut [f64],
) {
    let (da, rest) = block.split_at_mut(layer.rank * layer.in_dim);
    let (db, dbias) = rest.split_at_mut(layer.out_dim * layer.rank);
    // bt_dy[r] = sum_o B[o,r] dy[o]
    let mut bt_dy = vec![0.0; layer.rank];
    for o in 0..layer.out_dim {
        let d = dy[o];
        for r in 0..layer.rank {
            bt_dy[r] += layer.b[o * layer.rank + r] * d;
        }
    }
    for &(i, v) in x {
        for r in 0..layer.rank {
            da[r * layer.in_dim + i] = scaling * bt_dy[r] * v;
        }
    }
    for o in 0..layer.out_dim {
        let d = dy[o];
        for r in 0..layer.rank {
            db[o * layer.rank + r] = scaling * d * ax[r];
        }
        dbias[o] = d;
    }
}

/// Same as [`layer_backward_sparse`] for a dense input; also returns the
/// gradient with respect to the layer input.
fn layer_backward_dense(
    layer: &AdaptedLayer,
    x: &[f64],
    ax: &[f64],
    dy: &[f64],
    scaling: f64,
    block: &mut [f64],
) -> Vec<f64> {
    let (da, rest) = block.split_at_mut(layer.rank * layer.in_dim);
    let (db, dbias) = rest.split_at_mut(layer.out_dim * layer.rank);
    let mut bt_dy = vec![0.0; layer.rank];
    for o in 0..layer.out_dim {
        let d = dy[o];
        for r in 0..layer.rank {
            bt_dy[r] += layer.b[o * layer.rank + r] * d;
        }
    }
    for r in 0..layer.rank {
        let row = &mut da[r * layer.in_dim..(r + 1) * layer.in_dim];
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = scaling * bt_dy[r] * x[i];
        }
    }
    for o in 0..layer.out_dim {
        let d = dy[o];
        for r in 0..layer.rank {
            db[o * layer.rank + r] = scaling * d * ax[r];
        }
        dbias[o] = d;
    }
    // dx = W_eff^T dy = W0^T dy + scaling * A^T (B^T dy)
    let mut dx = vec![0.0; layer.in_dim];
    for o in 0..layer.out_dim {
        let d = dy[o];
        let row = &layer.base[o * layer.in_dim..(o + 1) * layer.in_dim];
        for (i, w) in row.iter().enumerate() {
            dx[i] += w * d;
        }
    }
    for r in 0..layer.rank {
        let row = &layer.a[r * layer.in_dim..(r + 1) * layer.in_dim];
        for (i, a) in row.iter().enumerate() {
            dx[i] += scaling * a * bt_dy[r];
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Flat trainable vector
// ---------------------------------------------------------------------------

pub fn flatten_trainable(params: &ModelParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(trainable_len(params));
    for layer in &params.layers {
        out.extend_from_slice(&layer.a);
        out.extend_from_slice(&layer.b);
        out.extend_from_slice(&layer.bias);
    }
    out
}

pub fn set_trainable(params: &mut ModelParams, flat: &[f64]) -> Result<()> {
    if flat.len() != trainable_len(params) {
        return Err(Error::DimensionMismatch(format!(
            "flat vector of {} entries, expected {}",
            flat.len(),
            trainable_len(params)
        )));
    }
    let mut offset = 0;
    for layer in &mut params.layers {
        let na = layer.rank * layer.in_dim;
        let nb = layer.out_dim * layer.rank;
        let nbias = layer.out_dim;
        layer.a.copy_from_slice(&flat[offset..offset + na]);
        offset += na;
        layer.b.copy_from_slice(&flat[offset..offset + nb]);
        offset += nb;
        layer.bias.copy_from_slice(&flat[offset..offset + nbias]);
        offset += nbias;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Binary container: magic, version, arch descriptor, flat trainable vector,
// frozen bases in layer order (row-major). All numbers little-endian; floats
// stored as raw bits, so save -> load is bit-exact.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"DPLM";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&params.arch.descriptor_bytes())?;
    let flat = flatten_trainable(params);
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in &flat {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    let base_len: usize = params.layers.iter().map(|l| l.base.len()).sum();
    w.write_all(&(base_len as u64).to_le_bytes())?;
    for layer in &params.layers {
        for v in &layer.base {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_params(params, std::io::BufWriter::new(file))
}

fn read_exact_array<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_bits(u64::from_le_bytes(buf)));
    }
    Ok(out)
}

pub fn read_params<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a model parameter container".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported container version {version}"
        )));
    }
    let mut kind_byte = [0u8; 1];
    r.read_exact(&mut kind_byte)?;
    let kind = match kind_byte[0] {
        0 => ModelKind::Classifier,
        1 => ModelKind::Generator,
        other => return Err(Error::Parse(format!("unknown model kind byte {other}"))),
    };
    let read_u32 = |r: &mut R| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let input_dim = read_u32(&mut r)?;
    let hidden_dim = read_u32(&mut r)?;
    let output_dim = read_u32(&mut r)?;
    let lora_rank = read_u32(&mut r)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let lora_scale = f64::from_bits(u64::from_le_bytes(u64buf));
    let arch = ModelArch {
        kind,
        input_dim,
        hidden_dim,
        output_dim,
        lora_rank,
        lora_scale,
    };
    arch.validate().map_err(|e| Error::Parse(e.to_string()))?;

    let mut params = ModelParams {
        arch,
        layers: arch
            .layer_dims()
            .into_iter()
            .map(|(in_dim, out_dim)| AdaptedLayer {
                in_dim,
                out_dim,
                rank: arch.lora_rank as usize,
                base: vec![0.0; in_dim * out_dim],
                a: vec![0.0; arch.lora_rank as usize * in_dim],
                b: vec![0.0; out_dim * arch.lora_rank as usize],
                bias: vec![0.0; out_dim],
            })
            .collect(),
    };

    r.read_exact(&mut u64buf)?;
    let flat_len = u64::from_le_bytes(u64buf) as usize;
    if flat_len != trainable_len(&params) {
        return Err(Error::Parse(format!(
            "container holds {flat_len} trainable entries, architecture needs {}",
            trainable_len(&params)
        )));
    }
    let flat = read_exact_array(&mut r, flat_len)?;
    set_trainable(&mut params, &flat)?;

    r.read_exact(&mut u64buf)?;
    let base_len = u64::from_le_bytes(u64buf) as usize;
    let expected: usize = params.layers.iter().map(|l| l.base.len()).sum();
    if base_len != expected {
        return Err(Error::Parse(format!(
            "container holds {base_len} base entries, architecture needs {expected}"
        )));
    }
    for layer in &mut params.layers {
        layer.base = read_exact_array(&mut r, layer.base.len())?;
    }
    Ok(params)
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path)?;
    read_params(std::io::BufReader::new(file))
}
