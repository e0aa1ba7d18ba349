//! Train a private label-conditioned generator, then sample synthetic
//! documents with nucleus sampling. Releasing anything computed from the
//! generator afterwards costs no additional privacy.

use std::collections::BTreeSet;

use dplab::accountant::PrivacyBudget;
use dplab::corpus::{generate_corpus, generate_pretrain_docs, CorpusConfig};
use dplab::distill::{generate_synthetic_corpus, GenerationConfig, NucleusSampler};
use dplab::dp_optim::{train_dp, DataSplit, DpTrainConfig, TrainObjective};
use dplab::model::{init_model, ModelArch, ModelKind};
use dplab::stream::rng_from;

fn main() -> dplab::Result<()> {
    // nucleus sampling on a hand-sized distribution first
    let logits: Vec<f64> = [0.5f64, 0.3, 0.15, 0.05].iter().map(|p| p.ln()).collect();
    let sampler = NucleusSampler::new(&logits, 0.9, 1.0)?;
    println!("mass 0.9 over probs [0.5, 0.3, 0.15, 0.05]:");
    println!("  kept tokens {:?}", sampler.kept_indices());
    println!("  renormalized distribution {:?}", sampler.distribution());
    let mut rng = rng_from(1);
    let draws: Vec<usize> = (0..10).map(|_| sampler.sample(&mut rng)).collect();
    println!("  ten draws: {draws:?}");

    // now a real generator: frozen base from label-free pretraining docs,
    // low-rank adapter trained privately on the labeled corpus
    let config = CorpusConfig {
        vocab_size: 200,
        num_labels: 10,
        num_docs: 600,
        doc_length: 40,
        labels_per_doc_mean: 2.5,
        label_skew: 0.8,
        split_ratios: [0.8, 0.1, 0.1],
        seed: 3,
    };
    let corpus = generate_corpus(&config)?;
    let pretrain = generate_pretrain_docs(&config, 500)?;
    let arch = ModelArch {
        kind: ModelKind::Generator,
        input_dim: 10,
        hidden_dim: 0,
        output_dim: 200,
        lora_rank: 4,
        lora_scale: 16.0,
    };
    let mut generator = init_model(&arch, &pretrain, 9)?;
    let transcript = train_dp(
        &mut generator,
        &DataSplit::real(&corpus.train),
        &DataSplit::real(&corpus.validation),
        &TrainObjective::GeneratorXent,
        &PrivacyBudget::new(3.0, 1e-5)?,
        &DpTrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 8,
            patience: 3,
            sampling_rate: 0.05,
            noise_override: None,
        },
        0.7,
        9,
    )?;
    println!(
        "\ngenerator trained: spent epsilon {:.4}, {} steps",
        transcript.achieved_epsilon.unwrap(),
        transcript.steps_executed
    );

    // condition on the real training label sets, one synthetic doc each
    let conditioning: Vec<BTreeSet<u32>> =
        corpus.train.iter().take(3).map(|d| d.labels.clone()).collect();
    let synthetic = generate_synthetic_corpus(
        &generator,
        &conditioning,
        &GenerationConfig {
            nucleus_mass: 0.9,
            temperature: 0.8,
            doc_length: 40,
        },
        77,
    )?;
    println!("three synthetic documents:");
    for doc in &synthetic {
        println!("  labels {:?} -> tokens {:?}...", doc.labels, &doc.tokens[..10]);
    }
    Ok(())
}
