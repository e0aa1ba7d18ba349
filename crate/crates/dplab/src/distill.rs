//! Synthetic document generation and the distillation objective.
//!
//! A trained generator turns a conditioning label set into token logits;
//! documents are drawn token by token with temperature-scaled nucleus
//! sampling (keep the smallest probability prefix whose mass reaches the
//! threshold, renormalize, sample). Each synthetic document reuses its
//! conditioning set as its labels, so a synthetic corpus mirrors the label
//! structure of the corpus it replaces without touching any real record.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledDoc;
use crate::error::{Error, Result};
use crate::model::{self, ModelKind, ModelParams};
use crate::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Probability mass kept by nucleus sampling, in (0, 1].
    pub nucleus_mass: f64,
    /// Softmax temperature applied to generator logits.
    pub temperature: f64,
    /// Tokens per synthetic document.
    pub doc_length: usize,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nucleus_mass > 0.0 && self.nucleus_mass <= 1.0) {
            return Err(Error::InvalidConfig(
                "nucleus_mass must lie in (0, 1]".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(
                "temperature must be positive and finite".into(),
            ));
        }
        if self.doc_length == 0 {
            return Err(Error::InvalidConfig("doc_length must be positive".into()));
        }
        Ok(())
    }
}

/// Indices of the smallest probability prefix (probabilities descending,
/// ties broken toward the smaller index) whose cumulative mass reaches
/// `mass`. `probs` must already be a distribution.
pub fn nucleus_keep(probs: &[f64], mass: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // stable sort keeps equal probabilities in ascending index order
    order.sort_by(|&i, &j| probs[j].partial_cmp(&probs[i]).expect("finite probs"));
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for idx in order {
        kept.push(idx);
        cum += probs[idx];
        if cum >= mass {
            break;
        }
    }
    kept
}

/// Temperature-scaled nucleus distribution over token indices, prepared once
/// and sampled many times.
pub struct NucleusSampler {
    kept: Vec<usize>,
    /// Normalized cumulative masses over `kept`; the last entry is exactly 1.
    cumulative: Vec<f64>,
    dim: usize,
}

impl NucleusSampler {
    pub fn new(logits: &[f64], mass: f64, temperature: f64) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidInput("empty logit vector".into()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("generator logit".into()));
        }
        if !(mass > 0.0 && mass <= 1.0) {
            return Err(Error::InvalidConfig(
                "nucleus_mass must lie in (0, 1]".into(),
            ));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::InvalidConfig(
                "temperature must be positive and finite".into(),
            ));
        }
        let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|&u| (u - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let kept = nucleus_keep(&probs, mass);
        let kept_mass: f64 = kept.iter().map(|&i| probs[i]).sum();
        let mut cumulative = Vec::with_capacity(kept.len());
        let mut cum = 0.0;
        for &i in &kept {
            cum += probs[i] / kept_mass;
            cumulative.push(cum);
        }
        // guard against the renormalized tail landing at 1 - 1e-16
        *cumulative.last_mut().expect("kept is never empty") = 1.0;
        Ok(NucleusSampler {
            kept,
            cumulative,
            dim: logits.len(),
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let pos = self.cumulative.partition_point(|&c| c <= u);
        self.kept[pos.min(self.kept.len() - 1)]
    }

    /// Dense renormalized distribution; excluded indices carry exactly zero.
    pub fn distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut prev = 0.0;
        for (&idx, &cum) in self.kept.iter().zip(&self.cumulative) {
            out[idx] = cum - prev;
            prev = cum;
        }
        out
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }
}

/// Draws one token index from the nucleus distribution of `logits`.
pub fn nucleus_sample(
    logits: &[f64],
    mass: f64,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    Ok(NucleusSampler::new(logits, mass, temperature)?.sample(rng))
}

/// Generates one synthetic document per conditioning label set. Document `d`
/// draws from its own seed-derived stream, and the conditioning set becomes
/// the document's labels. Only the generator's parameters are read, so the
/// output is a post-processing of whatever produced them.
pub fn generate_synthetic_corpus(
    generator: &ModelParams,
    conditioning: &[BTreeSet<u32>],
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<Vec<LabeledDoc>> {
    cfg.validate()?;
    if generator.arch.kind != ModelKind::Generator {
        return Err(Error::InvalidInput(
            "synthetic documents require a generator model".into(),
        ));
    }
    let doc_stream = stream::mix_str(seed, "synthetic-doc");
    let mut docs = Vec::with_capacity(conditioning.len());
    for (d, labels) in conditioning.iter().enumerate() {
        let logits = model::forward_generator(generator, labels)?;
        let sampler = NucleusSampler::new(&logits, cfg.nucleus_mass, cfg.temperature)?;
        let mut rng = stream::rng_from(stream::mix(doc_stream, d as u64));
        let tokens = (0..cfg.doc_length)
            .map(|_| sampler.sample(&mut rng) as u32)
            .collect();
        docs.push(LabeledDoc {
            tokens,
            labels: labels.clone(),
        });
    }
    Ok(docs)
}

/// Distillation loss: `hard_weight` times the weighted BCE against the hard
/// labels plus `1 - hard_weight` times the mean squared error against the
/// teacher's raw logits.
pub fn distillation_loss(
    student_logits: &[f64],
    teacher_logits: &[f64],
    hard_labels: &BTreeSet<u32>,
    hard_weight: f64,
    weights: &[f64],
) -> Result<f64> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} student logits vs {} teacher logits",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    if !(0.0..=1.0).contains(&hard_weight) {
        return Err(Error::InvalidConfig(format!(
            "hard_weight {hard_weight} outside [0, 1]"
        )));
    }
    let bce = model::weighted_bce_loss(student_logits, hard_labels, weights)?;
    let mse = student_logits
        .iter()
        .zip(teacher_logits)
        .map(|(s, t)| (s - t) * (s - t))
        .sum::<f64>()
        / student_logits.len() as f64;
    Ok(hard_weight * bce + (1.0 - hard_weight) * mse)
}
