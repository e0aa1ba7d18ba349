//! Multi-label classification metrics over sigmoid probabilities.
//!
//! Thresholds are chosen on a validation split from the fixed grid
//! 0.01, 0.02, ..., 0.99: either one threshold per label (maximizing that
//! label's F1) or one global threshold (maximizing pooled micro-F1). Ties
//! break toward the smallest threshold, and a label with no positive
//! validation example falls back to 0.5.
//!
//! Ranking quality is measured with pooled average precision over all
//! (example, label) cells, which depends only on the ordering of the
//! probabilities.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    PerLabel,
    GlobalMicro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub micro_auprc: f64,
    /// Fraction of (example, label) cells predicted incorrectly.
    pub hamming: f64,
    pub per_label_f1: Vec<f64>,
}

/// The candidate decision thresholds: 0.01 through 0.99.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|i| i as f64 / 100.0)
}

fn f1_from_counts(tp: u64, fp: u64, r#fn: u64) -> f64 {
    let denom = 2 * tp + fp + r#fn;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn validate_inputs(probs: &[Vec<f64>], golds: &[BTreeSet<u32>]) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("no examples to score".into()));
    }
    if probs.len() != golds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability rows vs {} gold sets",
            probs.len(),
            golds.len()
        )));
    }
    let num_labels = probs[0].len();
    if num_labels == 0 {
        return Err(Error::InvalidInput("zero labels".into()));
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != num_labels {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} probabilities, expected {num_labels}",
                row.len()
            )));
        }
        for &p in row {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "probability {p} outside [0, 1] in row {i}"
                )));
            }
        }
    }
    Ok(num_labels)
}

/// Per-label counts (tp, fp, fn) of thresholding column `label` at `tau`.
fn label_counts(
    probs: &[Vec<f64>],
    golds: &[BTreeSet<u32>],
    label: usize,
    tau: f64,
) -> (u64, u64, u64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut r#fn = 0;
    for (row, gold) in probs.iter().zip(golds) {
        let predicted = row[label] >= tau;
        let actual = gold.contains(&(label as u32));
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => r#fn += 1,
            (false, false) => {}
        }
    }
    (tp, fp, r#fn)
}

/// Chooses decision thresholds on a validation split. Returns one threshold
/// per label in both modes; the global mode repeats its single threshold.
pub fn optimize_thresholds(
    probs: &[Vec<f64>],
    golds: &[BTreeSet<u32>],
    mode: ThresholdMode,
) -> Result<Vec<f64>> {
    let num_labels = validate_inputs(probs, golds)?;
    match mode {
        ThresholdMode::PerLabel => {
            let mut thresholds = Vec::with_capacity(num_labels);
            for label in 0..num_labels {
                let has_positive = golds.iter().any(|g| g.contains(&(label as u32)));
                if !has_positive {
                    thresholds.push(0.5);
                    continue;
                }
                let mut best_tau = 0.0;
                let mut best_f1 = f64::NEG_INFINITY;
                for tau in threshold_grid() {
                    let (tp, fp, r#fn) = label_counts(probs, golds, label, tau);
                    let f1 = f1_from_counts(tp, fp, r#fn);
                    if f1 > best_f1 {
                        best_f1 = f1;
                        best_tau = tau;
                    }
                }
                thresholds.push(best_tau);
            }
            Ok(thresholds)
        }
        ThresholdMode::GlobalMicro => {
            let mut best_tau = 0.0;
            let mut best_f1 = f64::NEG_INFINITY;
            for tau in threshold_grid() {
                let mut tp = 0;
                let mut fp = 0;
                let mut r#fn = 0;
                for label in 0..num_labels {
                    let (t, f, n) = label_counts(probs, golds, label, tau);
                    tp += t;
                    fp += f;
                    r#fn += n;
                }
                let f1 = f1_from_counts(tp, fp, r#fn);
                if f1 > best_f1 {
                    best_f1 = f1;
                    best_tau = tau;
                }
            }
            Ok(vec![best_tau; num_labels])
        }
    }
}

/// Applies per-label thresholds to one probability row.
pub fn predict(row: &[f64], thresholds: &[f64]) -> BTreeSet<u32> {
    row.iter()
        .zip(thresholds)
        .enumerate()
        .filter(|(_, (p, tau))| *p >= *tau)
        .map(|(j, _)| j as u32)
        .collect()
}

/// Pooled average precision over all (example, label) cells: cells are ranked
/// by probability (descending, ties by example then label index), and the
/// precision at each positive's rank is averaged. Invariant under strictly
/// monotone transforms of the probabilities.
pub fn micro_auprc(probs: &[Vec<f64>], golds: &[BTreeSet<u32>]) -> Result<f64> {
    let num_labels = validate_inputs(probs, golds)?;
    let mut cells: Vec<(f64, usize, usize, bool)> = Vec::with_capacity(probs.len() * num_labels);
    for (i, (row, gold)) in probs.iter().zip(golds).enumerate() {
        for (j, &p) in row.iter().enumerate() {
            cells.push((p, i, j, gold.contains(&(j as u32))));
        }
    }
    cells.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite probabilities")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let num_positives = cells.iter().filter(|c| c.3).count();
    if num_positives == 0 {
        return Ok(0.0);
    }
    let mut seen_positives = 0u64;
    let mut ap = 0.0;
    for (rank, cell) in cells.iter().enumerate() {
        if cell.3 {
            seen_positives += 1;
            ap += seen_positives as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / num_positives as f64)
}

/// Scores thresholded predictions and the underlying ranking.
pub fn compute_metrics(
    probs: &[Vec<f64>],
    golds: &[BTreeSet<u32>],
    thresholds: &[f64],
) -> Result<MetricsReport> {
    let num_labels = validate_inputs(probs, golds)?;
    if thresholds.len() != num_labels {
        return Err(Error::DimensionMismatch(format!(
            "{} thresholds vs {num_labels} labels",
            thresholds.len()
        )));
    }
    let mut per_label_f1 = Vec::with_capacity(num_labels);
    let mut tp_total = 0u64;
    let mut fp_total = 0u64;
    let mut fn_total = 0u64;
    for label in 0..num_labels {
        let (tp, fp, r#fn) = label_counts(probs, golds, label, thresholds[label]);
        per_label_f1.push(f1_from_counts(tp, fp, r#fn));
        tp_total += tp;
        fp_total += fp;
        fn_total += r#fn;
    }
    let micro_f1 = f1_from_counts(tp_total, fp_total, fn_total);
    let macro_f1 = per_label_f1.iter().sum::<f64>() / num_labels as f64;
    let cells = (probs.len() * num_labels) as f64;
    // every fp and fn is exactly one wrong cell
    let hamming = (fp_total + fn_total) as f64 / cells;
    let micro_auprc = micro_auprc(probs, golds)?;
    Ok(MetricsReport {
        micro_f1,
        macro_f1,
        micro_auprc,
        hamming,
        per_label_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gold(sets: &[&[u32]]) -> Vec<BTreeSet<u32>> {
        sets.iter()
            .map(|s| s.iter().copied().collect())
            .collect()
    }

    #[test]
    fn separated_probabilities_pick_the_smallest_perfect_threshold() {
        let probs = vec![vec![0.9], vec![0.8], vec![0.1], vec![0.05]];
        let golds = gold(&[&[0], &[0], &[], &[]]);
        let t = optimize_thresholds(&probs, &golds, ThresholdMode::PerLabel).unwrap();
        // every grid value in (0.1, 0.8] is perfect; ties break low
        assert!((t[0] - 0.11).abs() < 1e-12);
    }

    #[test]
    fn constant_probabilities_pick_the_smallest_threshold() {
        let probs = vec![vec![0.5], vec![0.5], vec![0.5]];
        let golds = gold(&[&[0], &[], &[0]]);
        let t = optimize_thresholds(&probs, &golds, ThresholdMode::PerLabel).unwrap();
        // any threshold <= 0.5 predicts everything positive, F1 = 4/5
        assert!((t[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn labels_without_positives_fall_back_to_half() {
        let probs = vec![vec![0.9, 0.2], vec![0.8, 0.3]];
        let golds = gold(&[&[0], &[0]]);
        let t = optimize_thresholds(&probs, &golds, ThresholdMode::PerLabel).unwrap();
        assert!((t[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_fixture() {
        // gold: e0 {0}, e1 {0,1}; predictions at tau 0.5: e0 {0,1}, e1 {0}
        let probs = vec![vec![0.9, 0.6], vec![0.7, 0.3]];
        let golds = gold(&[&[0], &[0, 1]]);
        let m = compute_metrics(&probs, &golds, &[0.5, 0.5]).unwrap();
        assert!((m.per_label_f1[0] - 1.0).abs() < 1e-12);
        assert!((m.per_label_f1[1] - 0.0).abs() < 1e-12);
        assert!((m.macro_f1 - 0.5).abs() < 1e-12);
        assert!((m.micro_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.hamming - 0.5).abs() < 1e-12);
        // ranked cells: (0.9,+), (0.7,+), (0.6,-), (0.3,+)
        let expected_ap = (1.0 + 1.0 + 0.75) / 3.0;
        assert!((m.micro_auprc - expected_ap).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.95, 0.85]];
        let golds = gold(&[&[0], &[1], &[0, 1]]);
        let m = compute_metrics(&probs, &golds, &[0.5, 0.5]).unwrap();
        assert_eq!(m.micro_f1, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.hamming, 0.0);
        assert_eq!(m.micro_auprc, 1.0);
    }

    /// Rank-by-rank average precision, O(n^2), as an independent oracle.
    fn naive_ap(cells: &[(f64, usize, usize, bool)]) -> f64 {
        let mut sorted = cells.to_vec();
        sorted.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let positives = sorted.iter().filter(|c| c.3).count();
        if positives == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for k in 0..sorted.len() {
            if sorted[k].3 {
                let hits = sorted[..=k].iter().filter(|c| c.3).count();
                total += hits as f64 / (k + 1) as f64;
            }
        }
        total / positives as f64
    }

    #[test]
    fn metrics_match_naive_recomputation() {
        let mut rng = crate::stream::rng_from(23);
        for _ in 0..200 {
            let n = rng.gen_range(1..8);
            let l = rng.gen_range(1..5);
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..l).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let golds: Vec<BTreeSet<u32>> = (0..n)
                .map(|_| {
                    (0..l as u32)
                        .filter(|_| rng.gen_bool(0.4))
                        .collect()
                })
                .collect();
            let thresholds: Vec<f64> = (0..l).map(|_| rng.gen_range(0.1..0.9)).collect();
            let m = compute_metrics(&probs, &golds, &thresholds).unwrap();

            // independent counting over raw cells
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut r#fn = 0u64;
            let mut wrong = 0u64;
            let mut per_label = vec![(0u64, 0u64, 0u64); l];
            let mut cells = Vec::new();
            for i in 0..n {
                for j in 0..l {
                    let pred = probs[i][j] >= thresholds[j];
                    let actual = golds[i].contains(&(j as u32));
                    if pred && actual {
                        tp += 1;
                        per_label[j].0 += 1;
                    }
                    if pred && !actual {
                        fp += 1;
                        per_label[j].1 += 1;
                    }
                    if !pred && actual {
                        r#fn += 1;
                        per_label[j].2 += 1;
                    }
                    if pred != actual {
                        wrong += 1;
                    }
                    cells.push((probs[i][j], i, j, actual));
                }
            }
            let micro = if 2 * tp + fp + r#fn == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + r#fn) as f64
            };
            assert!((m.micro_f1 - micro).abs() <= 1e-12);
            let macro_f1: f64 = per_label
                .iter()
                .map(|&(tp, fp, r#fn)| {
                    if 2 * tp + fp + r#fn == 0 {
                        0.0
                    } else {
                        2.0 * tp as f64 / (2 * tp + fp + r#fn) as f64
                    }
                })
                .sum::<f64>()
                / l as f64;
            assert!((m.macro_f1 - macro_f1).abs() <= 1e-12);
            assert!((m.hamming - wrong as f64 / (n * l) as f64).abs() <= 1e-12);
            assert!((m.micro_auprc - naive_ap(&cells)).abs() <= 1e-12);
        }
    }

    #[test]
    fn average_precision_is_rank_invariant() {
        let mut rng = crate::stream::rng_from(31);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let golds: Vec<BTreeSet<u32>> = (0..n)
                .map(|_| (0..3u32).filter(|_| rng.gen_bool(0.4)).collect())
                .collect();
            let squared: Vec<Vec<f64>> = probs
                .iter()
                .map(|row| row.iter().map(|p| p * p).collect())
                .collect();
            let a = micro_auprc(&probs, &golds).unwrap();
            let b = micro_auprc(&squared, &golds).unwrap();
            assert_eq!(a, b, "AP must depend only on the ranking");
        }
    }

    #[test]
    fn hamming_complements_cellwise_accuracy() {
        let probs = vec![vec![0.9, 0.6, 0.2], vec![0.1, 0.7, 0.8]];
        let golds = gold(&[&[0], &[1, 2]]);
        let m = compute_metrics(&probs, &golds, &[0.5, 0.5, 0.5]).unwrap();
        let mut right = 0;
        for (row, g) in probs.iter().zip(&golds) {
            for (j, &p) in row.iter().enumerate() {
                if (p >= 0.5) == g.contains(&(j as u32)) {
                    right += 1;
                }
            }
        }
        let accuracy = right as f64 / 6.0;
        assert!((m.hamming + accuracy - 1.0).abs() < 1e-15);
    }

    #[test]
    fn global_mode_returns_one_shared_threshold() {
        let mut rng = crate::stream::rng_from(41);
        let probs: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let golds: Vec<BTreeSet<u32>> = (0..30)
            .map(|_| (0..4u32).filter(|_| rng.gen_bool(0.3)).collect())
            .collect();
        let t = optimize_thresholds(&probs, &golds, ThresholdMode::GlobalMicro).unwrap();
        assert!(t.windows(2).all(|w| w[0] == w[1]));
        let chosen = compute_metrics(&probs, &golds, &t).unwrap().micro_f1;
        for tau in threshold_grid() {
            let alt = compute_metrics(&probs, &golds, &vec![tau; 4])
                .unwrap()
                .micro_f1;
            assert!(chosen >= alt - 1e-15, "tau {tau} beats the chosen one");
        }
    }

    #[test]
    fn dimension_errors_are_reported() {
        let golds = gold(&[&[0]]);
        assert!(optimize_thresholds(&[], &golds, ThresholdMode::PerLabel).is_err());
        assert!(
            optimize_thresholds(&[vec![0.5], vec![0.5]], &golds, ThresholdMode::PerLabel).is_err()
        );
        assert!(compute_metrics(&[vec![0.5]], &golds, &[0.5, 0.5]).is_err());
        assert!(compute_metrics(&[vec![1.5]], &golds, &[0.5]).is_err());
        assert!(micro_auprc(&[vec![0.5], vec![0.2, 0.3]], &gold(&[&[0], &[1]])).is_err());
    }

    #[test]
    fn prediction_uses_inclusive_thresholds() {
        let set = predict(&[0.5, 0.49, 0.51], &[0.5, 0.5, 0.5]);
        let expected: BTreeSet<u32> = [0u32, 2].into_iter().collect();
        assert_eq!(set, expected);
    }
}
