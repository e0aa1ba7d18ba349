//! Attack two models with the membership-inference toolkit: a deliberately
//! overfit non-private model leaks membership; a privately trained one on
//! the same data leaks markedly less. (On this deliberately tiny corpus the
//! attacker's variance is large; the grid runs at desk scale put private
//! models at chance.)

use dplab::accountant::PrivacyBudget;
use dplab::corpus::{generate_corpus, label_statistics, CorpusConfig};
use dplab::dp_optim::{
    train_dp, train_nonprivate, DataSplit, DpTrainConfig, NonPrivateTrainConfig, Optimizer,
    TrainObjective,
};
use dplab::mia::{fit_attack_and_report, MiaReport, FEATURE_NAMES};
use dplab::model::{init_model, positive_class_weights, ModelArch, ModelKind, ModelParams};
use dplab::pipelines::attack_features_for;

fn audit(model: &ModelParams, corpus: &dplab::corpus::Corpus) -> dplab::Result<MiaReport> {
    let members = attack_features_for(model, &corpus.train)?;
    let nonmembers = attack_features_for(model, &corpus.test)?;
    fit_attack_and_report(&members, &nonmembers, 1234)
}

fn print_report(name: &str, report: &MiaReport) {
    println!("{name}:");
    println!(
        "  ensemble AUC {:.4} ({} members vs {} non-members)",
        report.ensemble_auc, report.members_used, report.nonmembers_used
    );
    let per_feature = [
        report.auc_loss,
        report.auc_confidence,
        report.auc_entropy,
        report.auc_margin,
        report.auc_logit_l2,
    ];
    for (feature, auc) in FEATURE_NAMES.iter().zip(per_feature) {
        println!("  {feature:<12} AUC {auc:.4}");
    }
}

fn main() -> dplab::Result<()> {
    // few training docs relative to the test side makes overfitting easy
    let corpus = generate_corpus(&CorpusConfig {
        vocab_size: 200,
        num_labels: 10,
        num_docs: 500,
        doc_length: 40,
        labels_per_doc_mean: 2.5,
        label_skew: 0.8,
        split_ratios: [0.2, 0.1, 0.7],
        seed: 21,
    })?;
    let arch = ModelArch {
        kind: ModelKind::Classifier,
        input_dim: 200,
        hidden_dim: 32,
        output_dim: 10,
        lora_rank: 4,
        lora_scale: 16.0,
    };
    let weights = positive_class_weights(&label_statistics(&corpus.train, 10)?)?;

    // memorize: many epochs, no early stopping, no decay
    let mut overfit = init_model(&arch, &[], 5)?;
    train_nonprivate(
        &mut overfit,
        &DataSplit::real(&corpus.train),
        &DataSplit::real(&corpus.validation),
        &TrainObjective::WeightedBce {
            weights: weights.clone(),
        },
        &NonPrivateTrainConfig {
            optimizer: Optimizer::AdamWCosine { weight_decay: 0.0 },
            learning_rate: 0.05,
            batch_size: 20,
            max_epochs: 150,
            patience: u32::MAX,
        },
        5,
    )?;
    print_report("overfit non-private model", &audit(&overfit, &corpus)?);

    // same data, same architecture, trained under a budget
    let mut private = init_model(&arch, &[], 5)?;
    train_dp(
        &mut private,
        &DataSplit::real(&corpus.train),
        &DataSplit::real(&corpus.validation),
        &TrainObjective::WeightedBce { weights },
        &PrivacyBudget::new(2.0, 1e-5)?,
        &DpTrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 10,
            patience: 3,
            sampling_rate: 0.1,
            noise_override: None,
        },
        1.0,
        5,
    )?;
    println!();
    print_report("private model", &audit(&private, &corpus)?);
    Ok(())
}
