//! Synthetic multi-label document corpus.
//!
//! Documents are bags of token indices paired with a non-empty set of label
//! indices. Generation is fully determined by [`CorpusConfig`]:
//!
//! * each document draws its label count from a truncated Poisson
//!   (`1 + Poisson(labels_per_doc_mean - 1)`, capped at `num_labels`),
//! * labels are drawn without replacement with weight `(j + 1)^(-label_skew)`,
//!   so lower label indices are more frequent (for single-label documents the
//!   marginal frequency is exactly proportional to that weight),
//! * tokens are drawn from a 70/30 mixture: with probability 0.7 a token
//!   uniform over the signature slice of one of the document's labels, with
//!   probability 0.3 a token uniform over the whole vocabulary.
//!
//! Each label owns a disjoint signature slice of the vocabulary (see
//! [`signature_slice`]), which is what makes the labels statistically
//! recoverable from token counts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream;

/// Mixture weight of the per-label signature component in token generation.
const SIGNATURE_MASS: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub vocab_size: u32,
    pub num_labels: u32,
    pub num_docs: usize,
    pub doc_length: usize,
    /// Mean number of labels per document; must lie in `[1, num_labels]`.
    pub labels_per_doc_mean: f64,
    /// Power-law exponent of the label marginals; 0 means uniform.
    pub label_skew: f64,
    /// Train/validation/test fractions; must sum to 1.
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.num_labels == 0 {
            return Err(Error::InvalidConfig(
                "vocab_size and num_labels must be positive".into(),
            ));
        }
        if self.vocab_size < self.num_labels {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} smaller than num_labels {}",
                self.vocab_size, self.num_labels
            )));
        }
        if self.num_docs == 0 || self.doc_length == 0 {
            return Err(Error::InvalidConfig(
                "num_docs and doc_length must be positive".into(),
            ));
        }
        if !self.labels_per_doc_mean.is_finite()
            || self.labels_per_doc_mean < 1.0
            || self.labels_per_doc_mean > self.num_labels as f64
        {
            return Err(Error::InvalidConfig(format!(
                "labels_per_doc_mean {} outside [1, {}]",
                self.labels_per_doc_mean, self.num_labels
            )));
        }
        if !self.label_skew.is_finite() || self.label_skew < 0.0 {
            return Err(Error::InvalidConfig("label_skew must be >= 0".into()));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split_ratios {:?} must be non-negative and sum to 1",
                self.split_ratios
            )));
        }
        Ok(())
    }
}

/// One document: a bag of token indices plus its label set (never empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub tokens: Vec<u32>,
    pub labels: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<LabeledDoc>,
    pub validation: Vec<LabeledDoc>,
    pub test: Vec<LabeledDoc>,
    /// True for corpora produced by a generator rather than sampled here.
    pub synthetic: bool,
}

impl Corpus {
    pub fn splits(&self) -> [&[LabeledDoc]; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

/// Per-label document counts over a document collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    /// `counts[j]` = number of documents carrying label `j`.
    pub counts: Vec<u64>,
    pub num_docs: usize,
}

/// The vocabulary slice whose tokens are over-represented in documents
/// carrying `label`. Slices of distinct labels are disjoint; the slice width
/// is `max(1, vocab_size / (num_labels + 1))` so that a shared background
/// region remains whenever the vocabulary allows one.
pub fn signature_slice(config: &CorpusConfig, label: u32) -> std::ops::Range<u32> {
    debug_assert!(label < config.num_labels);
    let width = (config.vocab_size / (config.num_labels + 1)).max(1);
    let start = label * width;
    start..start + width
}

/// Truncated Poisson sampler: `1 + Poisson(mean - 1)`, by Knuth's product
/// method. Exact for the small means used here; the loop count is the
/// Poisson draw plus one, which is exactly the truncated value we need.
fn sample_label_count(mean: f64, cap: u32, rng: &mut ChaCha8Rng) -> u32 {
    let lambda = mean - 1.0;
    let limit = (-lambda).exp();
    let mut k: u32 = 0;
    let mut p = 1.0;
    loop {
        k += 1;
        p *= rng.gen::<f64>();
        if p <= limit {
            break;
        }
    }
    k.min(cap)
}

/// Draw `count` distinct labels, each draw weighted by `(j + 1)^(-skew)`
/// renormalized over the labels still available.
fn sample_label_set(
    count: u32,
    num_labels: u32,
    skew: f64,
    rng: &mut ChaCha8Rng,
) -> BTreeSet<u32> {
    let mut remaining: Vec<(u32, f64)> = (0..num_labels)
        .map(|j| (j, (j as f64 + 1.0).powf(-skew)))
        .collect();
    let mut labels = BTreeSet::new();
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = remaining.len() - 1;
        for (i, (_, w)) in remaining.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                chosen = i;
                break;
            }
        }
        labels.insert(remaining.swap_remove(chosen).0);
    }
    labels
}

fn sample_tokens(
    config: &CorpusConfig,
    labels: &BTreeSet<u32>,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let label_list: Vec<u32> = labels.iter().copied().collect();
    (0..config.doc_length)
        .map(|_| {
            if rng.gen::<f64>() < SIGNATURE_MASS {
                let label = label_list[rng.gen_range(0..label_list.len())];
                let slice = signature_slice(config, label);
                rng.gen_range(slice.start..slice.end)
            } else {
                rng.gen_range(0..config.vocab_size)
            }
        })
        .collect()
}

/// Split `n` items into three parts matching `ratios` by the largest-remainder
/// rule (ties resolved toward the earlier split).
fn split_sizes(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let mut sizes = [0usize; 3];
    let mut fracs = [(0usize, 0.0f64); 3];
    let mut assigned = 0usize;
    for i in 0..3 {
        let target = ratios[i] * n as f64;
        sizes[i] = target.floor() as usize;
        fracs[i] = (i, target - target.floor());
        assigned += sizes[i];
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..n - assigned {
        sizes[fracs[k].0] += 1;
    }
    sizes
}

/// Generate a corpus. Identical `config` (including its seed) always yields a
/// bit-identical corpus.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = stream::rng_from(stream::mix_str(config.seed, "corpus"));
    let docs: Vec<LabeledDoc> = (0..config.num_docs)
        .map(|_| {
            let count =
                sample_label_count(config.labels_per_doc_mean, config.num_labels, &mut rng);
            let labels = sample_label_set(count, config.num_labels, config.label_skew, &mut rng);
            let tokens = sample_tokens(config, &labels, &mut rng);
            LabeledDoc { tokens, labels }
        })
        .collect();

    let sizes = split_sizes(config.num_docs, &config.split_ratios);
    let mut iter = docs.into_iter();
    let train: Vec<_> = iter.by_ref().take(sizes[0]).collect();
    let validation: Vec<_> = iter.by_ref().take(sizes[1]).collect();
    let test: Vec<_> = iter.collect();

    Ok(Corpus {
        config: config.clone(),
        train,
        validation,
        test,
        synthetic: false,
    })
}

/// Label-free public documents for fitting frozen generator bases. Drawn by
/// the same mixture process as [`generate_corpus`] but from a disjoint seed
/// stream, with the label sets discarded.
pub fn generate_pretrain_docs(config: &CorpusConfig, num_docs: usize) -> Result<Vec<Vec<u32>>> {
    config.validate()?;
    let mut rng = stream::rng_from(stream::mix_str(config.seed, "pretrain-corpus"));
    Ok((0..num_docs)
        .map(|_| {
            let count =
                sample_label_count(config.labels_per_doc_mean, config.num_labels, &mut rng);
            let labels = sample_label_set(count, config.num_labels, config.label_skew, &mut rng);
            sample_tokens(config, &labels, &mut rng)
        })
        .collect())
}

/// Count, per label, how many documents carry it.
pub fn label_statistics(docs: &[LabeledDoc], num_labels: u32) -> Result<LabelStats> {
    if docs.is_empty() {
        return Err(Error::InvalidInput(
            "label statistics over an empty document set".into(),
        ));
    }
    let mut counts = vec![0u64; num_labels as usize];
    for doc in docs {
        for &label in &doc.labels {
            if label >= num_labels {
                return Err(Error::InvalidInput(format!(
                    "label {label} out of range (num_labels {num_labels})"
                )));
            }
            counts[label as usize] += 1;
        }
    }
    Ok(LabelStats {
        counts,
        num_docs: docs.len(),
    })
}

// ---------------------------------------------------------------------------
// Line-delimited interchange format.
//
// Line 1 is a header of space-separated key=value pairs: the config fields,
// the three split sizes, and a synthetic marker. Every following line is one
// document: space-separated token indices, a tab, space-separated label
// indices (ascending). Floating-point fields round-trip exactly because the
// shortest-representation formatter is itself round-trip exact.
// ---------------------------------------------------------------------------

fn header_line(corpus: &Corpus) -> String {
    let c = &corpus.config;
    let mut s = String::new();
    write!(
        s,
        "vocab_size={} num_labels={} num_docs={} doc_length={} labels_per_doc_mean={} \
         label_skew={} split_ratios={},{},{} seed={} train={} validation={} test={} synthetic={}",
        c.vocab_size,
        c.num_labels,
        c.num_docs,
        c.doc_length,
        c.labels_per_doc_mean,
        c.label_skew,
        c.split_ratios[0],
        c.split_ratios[1],
        c.split_ratios[2],
        c.seed,
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len(),
        corpus.synthetic,
    )
    .expect("writing to String cannot fail");
    s
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    writeln!(w, "{}", header_line(corpus))?;
    for split in corpus.splits() {
        for doc in split {
            let tokens: Vec<String> = doc.tokens.iter().map(u32::to_string).collect();
            let labels: Vec<String> = doc.labels.iter().map(u32::to_string).collect();
            writeln!(w, "{}\t{}", tokens.join(" "), labels.join(" "))?;
        }
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_corpus(corpus, std::io::BufWriter::new(file))
}

struct HeaderFields {
    config: CorpusConfig,
    sizes: [usize; 3],
    synthetic: bool,
}

fn parse_header(line: &str) -> Result<HeaderFields> {
    let mut pairs = std::collections::HashMap::new();
    for item in line.split(' ') {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("header item `{item}` is not key=value")))?;
        pairs.insert(k, v);
    }
    fn get<'a>(pairs: &std::collections::HashMap<&str, &'a str>, key: &str) -> Result<&'a str> {
        pairs
            .get(key)
            .copied()
            .ok_or_else(|| Error::Parse(format!("header missing `{key}`")))
    }
    fn num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Parse(format!("header `{key}={v}` is not a valid number")))
    }
    let ratios_raw = get(&pairs, "split_ratios")?;
    let ratio_parts: Vec<&str> = ratios_raw.split(',').collect();
    if ratio_parts.len() != 3 {
        return Err(Error::Parse(format!(
            "split_ratios `{ratios_raw}` must have three components"
        )));
    }
    let config = CorpusConfig {
        vocab_size: num(get(&pairs, "vocab_size")?, "vocab_size")?,
        num_labels: num(get(&pairs, "num_labels")?, "num_labels")?,
        num_docs: num(get(&pairs, "num_docs")?, "num_docs")?,
        doc_length: num(get(&pairs, "doc_length")?, "doc_length")?,
        labels_per_doc_mean: num(get(&pairs, "labels_per_doc_mean")?, "labels_per_doc_mean")?,
        label_skew: num(get(&pairs, "label_skew")?, "label_skew")?,
        split_ratios: [
            num(ratio_parts[0], "split_ratios")?,
            num(ratio_parts[1], "split_ratios")?,
            num(ratio_parts[2], "split_ratios")?,
        ],
        seed: num(get(&pairs, "seed")?, "seed")?,
    };
    let sizes = [
        num(get(&pairs, "train")?, "train")?,
        num(get(&pairs, "validation")?, "validation")?,
        num(get(&pairs, "test")?, "test")?,
    ];
    let synthetic = match get(&pairs, "synthetic")? {
        "true" => true,
        "false" => false,
        other => {
            return Err(Error::Parse(format!(
                "synthetic flag `{other}` must be true or false"
            )))
        }
    };
    Ok(HeaderFields {
        config,
        sizes,
        synthetic,
    })
}

fn parse_doc(line: &str, line_no: usize, config: &CorpusConfig) -> Result<LabeledDoc> {
    let (token_part, label_part) = line.split_once('\t').ok_or_else(|| {
        Error::Parse(format!("line {line_no}: missing tab between tokens and labels"))
    })?;
    let mut tokens = Vec::new();
    for t in token_part.split(' ').filter(|s| !s.is_empty()) {
        let tok: u32 = t
            .parse()
            .map_err(|_| Error::Parse(format!("line {line_no}: token `{t}` is not an integer")))?;
        if tok >= config.vocab_size {
            return Err(Error::Parse(format!(
                "line {line_no}: token {tok} outside vocabulary of size {}",
                config.vocab_size
            )));
        }
        tokens.push(tok);
    }
    if tokens.is_empty() {
        return Err(Error::Parse(format!("line {line_no}: empty token list")));
    }
    let mut labels = BTreeSet::new();
    for l in label_part.split(' ').filter(|s| !s.is_empty()) {
        let lab: u32 = l
            .parse()
            .map_err(|_| Error::Parse(format!("line {line_no}: label `{l}` is not an integer")))?;
        if lab >= config.num_labels {
            return Err(Error::Parse(format!(
                "line {line_no}: label {lab} outside label space of size {}",
                config.num_labels
            )));
        }
        labels.insert(lab);
    }
    if labels.is_empty() {
        return Err(Error::Parse(format!("line {line_no}: empty label set")));
    }
    Ok(LabeledDoc { tokens, labels })
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Corpus> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty corpus file".into()))??;
    let fields = parse_header(&header)?;
    let expected: usize = fields.sizes.iter().sum();
    let mut docs = Vec::with_capacity(expected);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        docs.push(parse_doc(&line, i + 2, &fields.config)?);
    }
    if docs.len() != expected {
        return Err(Error::Parse(format!(
            "expected {expected} documents per header, found {}",
            docs.len()
        )));
    }
    let mut iter = docs.into_iter();
    let train: Vec<_> = iter.by_ref().take(fields.sizes[0]).collect();
    let validation: Vec<_> = iter.by_ref().take(fields.sizes[1]).collect();
    let test: Vec<_> = iter.collect();
    Ok(Corpus {
        config: fields.config,
        train,
        validation,
        test,
        synthetic: fields.synthetic,
    })
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}
