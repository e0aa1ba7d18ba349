//! Generate a seeded synthetic multi-label corpus, look at its statistics,
//! and round-trip it through the line-based file format.

use dplab::corpus::{
    generate_corpus, label_statistics, load_corpus, save_corpus, CorpusConfig,
};

fn main() -> dplab::Result<()> {
    let config = CorpusConfig {
        vocab_size: 500,
        num_labels: 20,
        num_docs: 2500,
        doc_length: 60,
        labels_per_doc_mean: 4.5,
        label_skew: 1.1,
        split_ratios: [0.8, 0.1, 0.1],
        seed: 7,
    };
    let corpus = generate_corpus(&config)?;
    println!(
        "generated {} train / {} validation / {} test docs",
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len()
    );

    let stats = label_statistics(&corpus.train, config.num_labels)?;
    let total: u64 = stats.counts.iter().sum();
    println!(
        "label frequencies are skewed: mean {:.1} labels/doc across {} assignments",
        total as f64 / stats.num_docs as f64,
        total
    );
    println!("  most frequent labels: {:?}", &stats.counts[..5]);
    println!("  least frequent labels: {:?}", &stats.counts[15..]);

    let doc = &corpus.train[0];
    println!(
        "first train doc: {} tokens, labels {:?}, token prefix {:?}",
        doc.tokens.len(),
        doc.labels,
        &doc.tokens[..8]
    );

    let dir = std::env::temp_dir().join("dplab_corpus_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("corpus.txt");
    save_corpus(&corpus, &path)?;
    let reloaded = load_corpus(&path)?;
    assert_eq!(reloaded, corpus);
    println!("round-tripped bit-identically through {}", path.display());
    Ok(())
}
