//! The budget-split pipeline end to end: half the budget trains a private
//! generator, half a private teacher; a non-private student then learns from
//! synthetic documents and the teacher's logits without ever touching a real
//! record.

use dplab::accountant::PrivacyBudget;
use dplab::corpus::{generate_corpus, CorpusConfig};
use dplab::distill::GenerationConfig;
use dplab::dp_optim::{DpTrainConfig, NonPrivateTrainConfig, Optimizer};
use dplab::metrics::ThresholdMode;
use dplab::pipelines::{
    compare_teacher_student, run_pipeline, ModelSettings, PipelineConfig, PipelineKind,
};

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

    let cfg = PipelineConfig {
        student: ModelSettings {
            hidden_dim: 16,
            lora_rank: 4,
            lora_scale: 16.0,
            clip_norm: 1.0,
        },
        teacher: ModelSettings {
            hidden_dim: 32,
            lora_rank: 4,
            lora_scale: 16.0,
            clip_norm: 0.7,
        },
        generator: ModelSettings {
            hidden_dim: 0,
            lora_rank: 4,
            lora_scale: 16.0,
            clip_norm: 0.7,
        },
        dp_train: DpTrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 8,
            patience: 3,
            sampling_rate: 0.05,
            noise_override: None,
        },
        nonprivate_train: NonPrivateTrainConfig {
            optimizer: Optimizer::AdamWCosine { weight_decay: 0.01 },
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
        },
        generation: GenerationConfig {
            nucleus_mass: 0.9,
            temperature: 0.8,
            doc_length: 40,
        },
        // pure logit matching: the hard-label term is off
        distill_hard_weight: 0.0,
        threshold_mode: ThresholdMode::PerLabel,
        pretrain_docs: 500,
    };

    let budget = PrivacyBudget::new(6.0, 1e-5)?;
    let outcome = run_pipeline(PipelineKind::DpDistil, &corpus, Some(budget), &cfg, 0)?;

    println!("stage transcripts:");
    for (name, t) in &outcome.transcripts {
        match t.achieved_epsilon {
            Some(eps) => println!(
                "  {name}: spent epsilon {eps:.4} of {:.1}, {} steps, {} real reads",
                t.target_epsilon.unwrap(),
                t.steps_executed,
                t.real_examples_read
            ),
            None => println!(
                "  {name}: non-private, {} steps, {} real reads",
                t.steps_executed, t.real_examples_read
            ),
        }
    }
    println!(
        "total spent epsilon {:.4} <= {:.1}",
        outcome.achieved_epsilon,
        budget.epsilon
    );
    println!(
        "\nstudent on real test data: micro-F1 {:.4}, macro-F1 {:.4}",
        outcome.metrics.micro_f1, outcome.metrics.macro_f1
    );

    let gap = compare_teacher_student(&outcome, &corpus, cfg.threshold_mode)?;
    println!(
        "teacher micro-F1 {:.4} vs student {:.4} (gap {:+.4})",
        gap.teacher_micro_f1, gap.student_micro_f1, gap.micro_f1_gap
    );
    Ok(())
}
