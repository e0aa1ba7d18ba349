//! Membership inference auditing.
//!
//! Given a trained classifier, each example yields five scalar features that
//! tend to separate training members from non-members when a model overfits:
//! per-example loss, peak confidence, mean per-label entropy, the gap
//! between the two most confident labels, and the logit norm. A balanced,
//! standardized dataset of member/non-member features trains an L2-regularized
//! logistic attacker whose quality is reported as mean ROC AUC over
//! stratified cross-validation folds, alongside single-feature AUCs computed
//! on the raw, unbalanced features. An AUC near 0.5 means the attack cannot
//! tell members from non-members.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, softplus};
use crate::stream;

pub const NUM_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] =
    ["loss", "confidence", "entropy", "margin", "logit_l2"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackFeatures {
    /// Unweighted mean binary cross-entropy over labels.
    pub bce_loss: f64,
    /// Highest per-label probability.
    pub max_confidence: f64,
    /// Mean binary entropy of the per-label probabilities.
    pub mean_entropy: f64,
    /// Gap between the two highest per-label probabilities.
    pub margin: f64,
    /// Euclidean norm of the logit vector.
    pub logit_l2: f64,
}

impl AttackFeatures {
    pub fn as_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.bce_loss,
            self.max_confidence,
            self.mean_entropy,
            self.margin,
            self.logit_l2,
        ]
    }
}

/// Computes the attack features of one example from its label logits and
/// gold labels. Needs at least two labels for the margin to exist.
pub fn extract_attack_features(logits: &[f64], labels: &BTreeSet<u32>) -> Result<AttackFeatures> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "attack features need at least 2 labels, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("classifier logit".into()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut entropy = 0.0;
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    let mut sq = 0.0;
    for (j, &z) in logits.iter().enumerate() {
        let p = sigmoid(z);
        loss += if labels.contains(&(j as u32)) {
            softplus(-z)
        } else {
            softplus(z)
        };
        // -ln p = softplus(-z), -ln(1-p) = softplus(z): stable at any z
        entropy += p * softplus(-z) + (1.0 - p) * softplus(z);
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
        sq += z * z;
    }
    Ok(AttackFeatures {
        bce_loss: loss / n,
        max_confidence: top1,
        mean_entropy: entropy / n,
        margin: top1 - top2,
        logit_l2: sq.sqrt(),
    })
}

/// ROC AUC of `positives` scoring above `negatives`, computed with midranks
/// so that ties contribute exactly one half. Equals the fraction of
/// (positive, negative) pairs ranked correctly, counting ties as half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidInput(
            "ROC AUC needs both positive and negative scores".into(),
        ));
    }
    if positives
        .iter()
        .chain(negatives)
        .any(|s| !s.is_finite())
    {
        return Err(Error::NonFinite("attack score".into()));
    }
    let mut pooled: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks are 1-based: the tie block [i, j) shares the mean rank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for entry in &pooled[i..j] {
            if entry.1 {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Balanced, standardized member/non-member features ready for the attacker.
pub struct AttackDataset {
    pub members: Vec<[f64; NUM_FEATURES]>,
    pub nonmembers: Vec<[f64; NUM_FEATURES]>,
    pub feature_means: [f64; NUM_FEATURES],
    /// Population standard deviations; zero marks a constant feature, whose
    /// standardized values are all zero.
    pub feature_stds: [f64; NUM_FEATURES],
}

/// Subsamples the larger side down to the smaller one (seeded, order
/// preserving), then standardizes each feature with the mean and population
/// standard deviation pooled over both sides.
pub fn build_attack_dataset(
    members: &[AttackFeatures],
    nonmembers: &[AttackFeatures],
    seed: u64,
) -> Result<AttackDataset> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidInput(
            "attack dataset needs both members and non-members".into(),
        ));
    }
    let target = members.len().min(nonmembers.len());
    let mut rng = stream::rng_from(stream::mix_str(seed, "mia-balance"));
    let mut subsample = |side: &[AttackFeatures]| -> Vec<[f64; NUM_FEATURES]> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..side.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(target);
        idx.sort_unstable();
        idx.into_iter().map(|i| side[i].as_array()).collect()
    };
    let mut kept_members = subsample(members);
    let mut kept_nonmembers = subsample(nonmembers);

    let total = (2 * target) as f64;
    let mut means = [0.0; NUM_FEATURES];
    for row in kept_members.iter().chain(&kept_nonmembers) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= total;
    }
    let mut vars = [0.0; NUM_FEATURES];
    for row in kept_members.iter().chain(&kept_nonmembers) {
        for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let mut stds = [0.0; NUM_FEATURES];
    for ((s, v), m) in stds.iter_mut().zip(&vars).zip(&means) {
        *s = (v / total).sqrt();
        // a constant feature's variance only reaches ~(mean * 1e-16)^2 in
        // floating point, never exactly zero; collapse it explicitly
        if *s <= m.abs() * 1e-12 {
            *s = 0.0;
        }
    }
    for row in kept_members.iter_mut().chain(kept_nonmembers.iter_mut()) {
        for ((v, m), s) in row.iter_mut().zip(&means).zip(&stds) {
            *v = if *s == 0.0 { 0.0 } else { (*v - m) / s };
        }
    }
    Ok(AttackDataset {
        members: kept_members,
        nonmembers: kept_nonmembers,
        feature_means: means,
        feature_stds: stds,
    })
}

const LOGREG_LAMBDA: f64 = 1e-2;
const LOGREG_TOLERANCE: f64 = 1e-6;
const LOGREG_STEP: f64 = 0.5;
const LOGREG_MAX_ITERS: usize = 200_000;

struct LogisticAttacker {
    weights: [f64; NUM_FEATURES],
    bias: f64,
}

impl LogisticAttacker {
    fn score(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Gradient descent from zero on the regularized mean log-loss; the L2
/// penalty applies to the weights only, never the bias. Runs until the
/// gradient norm drops to the tolerance (or an iteration cap that in
/// practice is never reached on standardized data).
fn fit_logistic(
    x: &[(&[f64; NUM_FEATURES], bool)],
) -> LogisticAttacker {
    let n = x.len() as f64;
    let mut w = [0.0; NUM_FEATURES];
    let mut b = 0.0;
    for _ in 0..LOGREG_MAX_ITERS {
        let mut gw = [0.0; NUM_FEATURES];
        let mut gb = 0.0;
        for (row, label) in x {
            let p = sigmoid(w.iter().zip(*row).map(|(w, v)| w * v).sum::<f64>() + b);
            let d = p - if *label { 1.0 } else { 0.0 };
            for (g, v) in gw.iter_mut().zip(*row) {
                *g += d * v;
            }
            gb += d;
        }
        let mut norm_sq = 0.0;
        for (g, wv) in gw.iter_mut().zip(&w) {
            *g = *g / n + LOGREG_LAMBDA * wv;
            norm_sq += *g * *g;
        }
        gb /= n;
        norm_sq += gb * gb;
        if norm_sq.sqrt() <= LOGREG_TOLERANCE {
            break;
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= LOGREG_STEP * g;
        }
        b -= LOGREG_STEP * gb;
    }
    LogisticAttacker { weights: w, bias: b }
}

pub const CV_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    /// Mean ROC AUC of the logistic attacker over stratified CV test folds.
    pub ensemble_auc: f64,
    pub auc_loss: f64,
    pub auc_confidence: f64,
    pub auc_entropy: f64,
    pub auc_margin: f64,
    pub auc_logit_l2: f64,
    /// Balanced per-side count the attacker was trained on.
    pub members_used: usize,
    pub nonmembers_used: usize,
}

/// Runs the full audit: raw single-feature AUCs on everything provided, then
/// the balanced, standardized, cross-validated logistic attack.
pub fn fit_attack_and_report(
    members: &[AttackFeatures],
    nonmembers: &[AttackFeatures],
    seed: u64,
) -> Result<MiaReport> {
    if members.len() < CV_FOLDS || nonmembers.len() < CV_FOLDS {
        return Err(Error::InvalidInput(format!(
            "need at least {CV_FOLDS} members and non-members, got {} and {}",
            members.len(),
            nonmembers.len()
        )));
    }

    // Single-feature AUCs use the raw, unbalanced features; no flipping, so
    // a feature that ranks members lower scores below one half.
    let feature_auc = |pick: fn(&AttackFeatures) -> f64| -> Result<f64> {
        let pos: Vec<f64> = members.iter().map(pick).collect();
        let neg: Vec<f64> = nonmembers.iter().map(pick).collect();
        roc_auc(&pos, &neg)
    };
    let auc_loss = feature_auc(|f| f.bce_loss)?;
    let auc_confidence = feature_auc(|f| f.max_confidence)?;
    let auc_entropy = feature_auc(|f| f.mean_entropy)?;
    let auc_margin = feature_auc(|f| f.margin)?;
    let auc_logit_l2 = feature_auc(|f| f.logit_l2)?;

    let ds = build_attack_dataset(members, nonmembers, seed)?;
    let n = ds.members.len();

    // Stratified folds: shuffle each side, then deal round-robin so every
    // fold stays balanced to within one example per side.
    use rand::seq::SliceRandom;
    let mut rng = stream::rng_from(stream::mix_str(seed, "mia-folds"));
    let mut member_order: Vec<usize> = (0..n).collect();
    member_order.shuffle(&mut rng);
    let mut nonmember_order: Vec<usize> = (0..n).collect();
    nonmember_order.shuffle(&mut rng);

    let mut fold_aucs = Vec::with_capacity(CV_FOLDS);
    for fold in 0..CV_FOLDS {
        let mut train: Vec<(&[f64; NUM_FEATURES], bool)> = Vec::new();
        let mut test_members: Vec<&[f64; NUM_FEATURES]> = Vec::new();
        let mut test_nonmembers: Vec<&[f64; NUM_FEATURES]> = Vec::new();
        for (pos, &i) in member_order.iter().enumerate() {
            if pos % CV_FOLDS == fold {
                test_members.push(&ds.members[i]);
            } else {
                train.push((&ds.members[i], true));
            }
        }
        for (pos, &i) in nonmember_order.iter().enumerate() {
            if pos % CV_FOLDS == fold {
                test_nonmembers.push(&ds.nonmembers[i]);
            } else {
                train.push((&ds.nonmembers[i], false));
            }
        }
        let attacker = fit_logistic(&train);
        let pos: Vec<f64> = test_members.iter().map(|x| attacker.score(x)).collect();
        let neg: Vec<f64> = test_nonmembers.iter().map(|x| attacker.score(x)).collect();
        fold_aucs.push(roc_auc(&pos, &neg)?);
    }
    let ensemble_auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;

    Ok(MiaReport {
        ensemble_auc,
        auc_loss,
        auc_confidence,
        auc_entropy,
        auc_margin,
        auc_logit_l2,
        members_used: n,
        nonmembers_used: n,
    })
}
