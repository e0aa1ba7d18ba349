//! Train a classifier privately with per-example clipping, Poisson
//! subsampling, and calibrated Gaussian noise, then read the transcript.

use dplab::accountant::PrivacyBudget;
use dplab::corpus::{generate_corpus, label_statistics, CorpusConfig};
use dplab::dp_optim::{train_dp, DataSplit, DpTrainConfig, TrainObjective};
use dplab::metrics::{compute_metrics, optimize_thresholds, ThresholdMode};
use dplab::model::{init_model, positive_class_weights, ModelArch, ModelKind};
use dplab::pipelines::classifier_probabilities;

fn main() -> dplab::Result<()> {
    let corpus = generate_corpus(&CorpusConfig {
        vocab_size: 200,
        num_labels: 10,
        num_docs: 600,
        doc_length: 40,
        labels_per_doc_mean: 2.5,
        label_skew: 0.8,
        split_ratios: [0.8, 0.1, 0.1],
        seed: 3,
    })?;

    let arch = ModelArch {
        kind: ModelKind::Classifier,
        input_dim: 200,
        hidden_dim: 32,
        output_dim: 10,
        lora_rank: 4,
        lora_scale: 16.0,
    };
    let mut params = init_model(&arch, &[], 42)?;

    let budget = PrivacyBudget::new(4.0, 1e-5)?;
    let weights = positive_class_weights(&label_statistics(&corpus.train, 10)?)?;
    let transcript = train_dp(
        &mut params,
        &DataSplit::real(&corpus.train),
        &DataSplit::real(&corpus.validation),
        &TrainObjective::WeightedBce { weights },
        &budget,
        &DpTrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 10,
            patience: 3,
            sampling_rate: 0.05,
            noise_override: None,
        },
        1.0, // clip norm
        42,
    )?;

    println!("planned {} steps, executed {}", transcript.steps_planned, transcript.steps_executed);
    println!(
        "noise multiplier {:.4}, clip violations {}",
        transcript.noise_multiplier.unwrap(),
        transcript.clip_violations
    );
    println!(
        "spent epsilon {:.4} of {:.1} (early stopping only ever reduces it)",
        transcript.achieved_epsilon.unwrap(),
        budget.epsilon
    );
    println!(
        "best epoch {:?} of {} run; validation loss per epoch:",
        transcript.best_epoch, transcript.epochs_run
    );
    for (i, loss) in transcript.epoch_val_loss.iter().enumerate() {
        println!("  epoch {}: {loss:.5}", i + 1);
    }

    // score on the held-out split with tuned per-label thresholds
    let val_probs = classifier_probabilities(&params, &corpus.validation)?;
    let golds: Vec<_> = corpus.validation.iter().map(|d| d.labels.clone()).collect();
    let thresholds = optimize_thresholds(&val_probs, &golds, ThresholdMode::PerLabel)?;
    let test_probs = classifier_probabilities(&params, &corpus.test)?;
    let test_golds: Vec<_> = corpus.test.iter().map(|d| d.labels.clone()).collect();
    let report = compute_metrics(&test_probs, &test_golds, &thresholds)?;
    println!(
        "\ntest micro-F1 {:.4}, macro-F1 {:.4}, AUPRC {:.4}, hamming {:.4}",
        report.micro_f1, report.macro_f1, report.micro_auprc, report.hamming
    );
    Ok(())
}
