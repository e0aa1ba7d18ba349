//! Experiment grid: configuration, execution, persistence, resumption.
//!
//! A grid is the cartesian product of the configured pipelines, privacy
//! budgets, and seeds (the non-private pipeline ignores the budget axis and
//! runs once per seed). Each cell trains on the same shared corpus with an
//! rng stream derived from the master seed and the cell key, writes its
//! artifacts into its own directory, and contributes one row to the results
//! CSV. Re-invocation skips cells whose row file parses cleanly, so an
//! interrupted grid resumes where it stopped.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accountant::PrivacyBudget;
use crate::corpus::{generate_corpus, save_corpus, CorpusConfig};
use crate::distill::GenerationConfig;
use crate::dp_optim::{DpTrainConfig, NonPrivateTrainConfig};
use crate::error::{Error, Result};
use crate::metrics::ThresholdMode;
use crate::model::save_params;
use crate::pipelines::{
    compare_teacher_student, run_pipeline, ModelSettings, PipelineConfig, PipelineKind,
    PipelineOutcome,
};
use crate::stream;

/// Environment variable that overrides the configured master seed.
pub const MASTER_SEED_ENV: &str = "DPLAB_MASTER_SEED";

/// Bumped whenever the results CSV columns change; the header row doubles as
/// the on-disk schema signature and is checked verbatim on parse.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

const CSV_COLUMNS: [&str; 16] = [
    "pipeline",
    "epsilon",
    "delta",
    "seed",
    "micro_f1",
    "macro_f1",
    "micro_auprc",
    "hamming",
    "ensemble_auc",
    "auc_loss",
    "auc_conf",
    "auc_entropy",
    "auc_margin",
    "auc_l2",
    "achieved_eps",
    "wall_seconds",
];

fn default_threshold_mode() -> ThresholdMode {
    ThresholdMode::PerLabel
}

fn default_pretrain_docs() -> usize {
    1000
}

/// Complete description of one experiment grid, loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub pipelines: Vec<PipelineKind>,
    /// Record wall-clock time per cell. Off by default so repeated runs
    /// produce byte-identical results files.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "default_threshold_mode")]
    pub threshold_mode: ThresholdMode,
    #[serde(default)]
    pub distill_hard_weight: f64,
    #[serde(default = "default_pretrain_docs")]
    pub pretrain_docs: usize,
    pub corpus: CorpusConfig,
    pub student: ModelSettings,
    pub teacher: ModelSettings,
    pub generator: ModelSettings,
    pub dp_train: DpTrainConfig,
    pub nonprivate_train: NonPrivateTrainConfig,
    pub generation: GenerationConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pipelines.is_empty() {
            return Err(Error::InvalidConfig("pipelines list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds list is empty".into()));
        }
        let needs_budget = self.pipelines.iter().any(PipelineKind::is_private);
        if needs_budget && self.epsilons.is_empty() {
            return Err(Error::InvalidConfig(
                "epsilons list is empty but private pipelines are configured".into(),
            ));
        }
        for &eps in &self.epsilons {
            if !eps.is_finite() || eps <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "epsilon {eps} must be positive and finite"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta {} must lie in (0, 1)",
                self.delta
            )));
        }
        // duplicate keys would collide in cell directories and the table
        for (name, dup) in [
            ("pipelines", has_duplicates(&self.pipelines)),
            ("epsilons", has_duplicates(&self.epsilons.iter().map(|e| e.to_bits()).collect::<Vec<_>>())),
            ("seeds", has_duplicates(&self.seeds)),
        ] {
            if dup {
                return Err(Error::InvalidConfig(format!(
                    "{name} list contains duplicates"
                )));
            }
        }
        self.corpus.validate()?;
        self.pipeline_config().validate()?;
        Ok(())
    }

    /// The per-pipeline knobs shared by every cell of the grid.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            student: self.student,
            teacher: self.teacher,
            generator: self.generator,
            dp_train: self.dp_train.clone(),
            nonprivate_train: self.nonprivate_train.clone(),
            generation: self.generation.clone(),
            distill_hard_weight: self.distill_hard_weight,
            threshold_mode: self.threshold_mode,
            pretrain_docs: self.pretrain_docs,
        }
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, x)| items[..i].contains(x))
}

/// Reads and parses the master-seed override, if the variable is set.
pub fn master_seed_from_env() -> Result<Option<u64>> {
    match std::env::var(MASTER_SEED_ENV) {
        Ok(text) => {
            let seed = text.trim().parse::<u64>().map_err(|_| {
                Error::Parse(format!(
                    "{MASTER_SEED_ENV} must be an unsigned 64-bit integer, got '{text}'"
                ))
            })?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

/// One (pipeline, epsilon, seed) cell. The non-private pipeline carries an
/// infinite epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub pipeline: PipelineKind,
    pub epsilon: f64,
    pub seed: u64,
}

impl GridCell {
    pub fn dir_name(&self) -> String {
        format!("{}_eps{}_seed{}", self.pipeline, self.epsilon, self.seed)
    }

    /// Independent rng stream per cell, derived from the master seed and the
    /// full cell key.
    pub fn run_seed(&self, master_seed: u64) -> u64 {
        let s = stream::mix_str(master_seed, self.pipeline.as_str());
        let s = stream::mix(s, self.epsilon.to_bits());
        stream::mix(s, self.seed)
    }
}

/// Grid enumeration order: pipelines as configured, then epsilons as
/// configured, then seeds as configured.
pub fn grid_cells(config: &ExperimentConfig) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &pipeline in &config.pipelines {
        if pipeline.is_private() {
            for &epsilon in &config.epsilons {
                for &seed in &config.seeds {
                    cells.push(GridCell {
                        pipeline,
                        epsilon,
                        seed,
                    });
                }
            }
        } else {
            for &seed in &config.seeds {
                cells.push(GridCell {
                    pipeline,
                    epsilon: f64::INFINITY,
                    seed,
                });
            }
        }
    }
    cells
}

/// One results row; the field order matches the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pipeline: PipelineKind,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub micro_auprc: f64,
    pub hamming: f64,
    pub ensemble_auc: f64,
    pub auc_loss: f64,
    pub auc_conf: f64,
    pub auc_entropy: f64,
    pub auc_margin: f64,
    pub auc_l2: f64,
    pub achieved_eps: f64,
    pub wall_seconds: f64,
}

impl ResultRow {
    fn from_outcome(
        cell: &GridCell,
        delta: f64,
        outcome: &PipelineOutcome,
        wall_seconds: f64,
    ) -> Result<Self> {
        let row = ResultRow {
            pipeline: cell.pipeline,
            epsilon: cell.epsilon,
            delta,
            seed: cell.seed,
            micro_f1: outcome.metrics.micro_f1,
            macro_f1: outcome.metrics.macro_f1,
            micro_auprc: outcome.metrics.micro_auprc,
            hamming: outcome.metrics.hamming,
            ensemble_auc: outcome.mia.ensemble_auc,
            auc_loss: outcome.mia.auc_loss,
            auc_conf: outcome.mia.auc_confidence,
            auc_entropy: outcome.mia.auc_entropy,
            auc_margin: outcome.mia.auc_margin,
            auc_l2: outcome.mia.auc_logit_l2,
            achieved_eps: outcome.achieved_epsilon,
            wall_seconds,
        };
        // no cell may ever claim more privacy spend than its target
        if row.achieved_eps > row.epsilon {
            return Err(Error::Calibration(format!(
                "cell {} achieved epsilon {} above its target {}",
                cell.dir_name(),
                row.achieved_eps,
                row.epsilon
            )));
        }
        Ok(row)
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.pipeline.to_string(),
            fmt_f64(self.epsilon),
            fmt_f64(self.delta),
            self.seed.to_string(),
            fmt_f64(self.micro_f1),
            fmt_f64(self.macro_f1),
            fmt_f64(self.micro_auprc),
            fmt_f64(self.hamming),
            fmt_f64(self.ensemble_auc),
            fmt_f64(self.auc_loss),
            fmt_f64(self.auc_conf),
            fmt_f64(self.auc_entropy),
            fmt_f64(self.auc_margin),
            fmt_f64(self.auc_l2),
            fmt_f64(self.achieved_eps),
            fmt_f64(self.wall_seconds),
        ]
    }

    fn from_record(record: &csv::StringRecord) -> Result<Self> {
        if record.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse(format!(
                "results row has {} fields, expected {}",
                record.len(),
                CSV_COLUMNS.len()
            )));
        }
        let field = |i: usize| record.get(i).unwrap();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{}' in column {}", field(i), CSV_COLUMNS[i])))
        };
        Ok(ResultRow {
            pipeline: field(0).parse()?,
            epsilon: num(1)?,
            delta: num(2)?,
            seed: field(3)
                .parse::<u64>()
                .map_err(|_| Error::Parse(format!("bad seed '{}'", field(3))))?,
            micro_f1: num(4)?,
            macro_f1: num(5)?,
            micro_auprc: num(6)?,
            hamming: num(7)?,
            ensemble_auc: num(8)?,
            auc_loss: num(9)?,
            auc_conf: num(10)?,
            auc_entropy: num(11)?,
            auc_margin: num(12)?,
            auc_l2: num(13)?,
            achieved_eps: num(14)?,
            wall_seconds: num(15)?,
        })
    }
}

/// Shortest decimal form that parses back to the same value; keeps the
/// results file both human-readable and lossless.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// All rows of a grid, in grid order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(CSV_COLUMNS)
            .map_err(|e| Error::Parse(format!("csv write: {e}")))?;
        for row in &self.rows {
            writer
                .write_record(row.to_record())
                .map_err(|e| Error::Parse(format!("csv write: {e}")))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Parse(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(format!("csv utf8: {e}")))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Parse("results file is empty".into()))?
            .map_err(|e| Error::Parse(format!("csv read: {e}")))?;
        if header.iter().ne(CSV_COLUMNS) {
            return Err(Error::Parse(format!(
                "results header does not match schema v{RESULTS_SCHEMA_VERSION}"
            )));
        }
        let mut rows = Vec::new();
        for record in records {
            let record = record.map_err(|e| Error::Parse(format!("csv read: {e}")))?;
            rows.push(ResultRow::from_record(&record)?);
        }
        Ok(ResultsTable { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_csv_string()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("json encode: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

fn write_cell_artifacts(
    dir: &Path,
    cell: &GridCell,
    outcome: &PipelineOutcome,
    corpus: &crate::corpus::Corpus,
    mode: ThresholdMode,
    row: &ResultRow,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_params(&outcome.student, &dir.join("student.params"))?;
    if let Some(teacher) = &outcome.teacher {
        save_params(teacher, &dir.join("teacher.params"))?;
    }
    if let Some(generator) = &outcome.generator {
        save_params(generator, &dir.join("generator.params"))?;
    }
    write_json(&dir.join("transcripts.json"), &outcome.transcripts)?;
    write_json(&dir.join("metrics.json"), &outcome.metrics)?;
    write_json(&dir.join("mia.json"), &outcome.mia)?;
    write_json(&dir.join("thresholds.json"), &outcome.thresholds)?;

    let mut per_label = String::from("label,f1\n");
    for (label, f1) in outcome.metrics.per_label_f1.iter().enumerate() {
        per_label.push_str(&format!("{label},{}\n", fmt_f64(*f1)));
    }
    fs::write(dir.join("per_label_f1.csv"), per_label)?;

    if cell.pipeline == PipelineKind::DpDistil {
        let gap = compare_teacher_student(outcome, corpus, mode)?;
        write_json(&dir.join("gap.json"), &gap)?;
    }

    // the row file is written last: its presence marks the cell complete
    let table = ResultsTable {
        rows: vec![row.clone()],
    };
    table.save(&dir.join("row.csv"))?;
    Ok(())
}

/// A completed cell is one whose row file parses and matches the cell key;
/// anything else (absent, truncated, stale) means the cell must run.
fn completed_row(dir: &Path, cell: &GridCell, delta: f64) -> Option<ResultRow> {
    let table = ResultsTable::load(&dir.join("row.csv")).ok()?;
    let [row] = table.rows.as_slice() else {
        return None;
    };
    let key_matches = row.pipeline == cell.pipeline
        && row.seed == cell.seed
        && (row.epsilon == cell.epsilon || (row.epsilon.is_infinite() && cell.epsilon.is_infinite()))
        && row.delta == delta;
    key_matches.then(|| row.clone())
}

/// Executes every grid cell, skipping those already completed on disk, and
/// rewrites the results CSV after each cell so progress is never lost.
pub fn run_experiment_grid(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let master_seed = config.master_seed;
    let corpus = generate_corpus(&config.corpus)?;
    let pipeline_config = config.pipeline_config();

    fs::create_dir_all(&config.output_dir)?;
    save_corpus(&corpus, &config.output_dir.join("corpus.txt"))?;
    let cells_dir = config.output_dir.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let results_path = config.output_dir.join("results.csv");

    let mut table = ResultsTable::default();
    for cell in grid_cells(config) {
        let dir = cells_dir.join(cell.dir_name());
        let row = match completed_row(&dir, &cell, config.delta) {
            Some(row) => row,
            None => {
                let budget = cell
                    .pipeline
                    .is_private()
                    .then(|| PrivacyBudget::new(cell.epsilon, config.delta))
                    .transpose()?;
                let started = Instant::now();
                let outcome = run_pipeline(
                    cell.pipeline,
                    &corpus,
                    budget,
                    &pipeline_config,
                    cell.run_seed(master_seed),
                )?;
                let wall_seconds = if config.record_timing {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                let row = ResultRow::from_outcome(&cell, config.delta, &outcome, wall_seconds)?;
                write_cell_artifacts(
                    &dir,
                    &cell,
                    &outcome,
                    &corpus,
                    config.threshold_mode,
                    &row,
                )?;
                row
            }
        };
        table.rows.push(row);
        table.save(&results_path)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp_optim::Optimizer;

    fn tiny_config(output_dir: PathBuf) -> ExperimentConfig {
        ExperimentConfig {
            output_dir,
            master_seed: 17,
            epsilons: vec![4.0],
            delta: 1e-5,
            seeds: vec![0, 1],
            pipelines: vec![PipelineKind::DpSmall, PipelineKind::LoraNoDp],
            record_timing: false,
            threshold_mode: ThresholdMode::PerLabel,
            distill_hard_weight: 0.0,
            pretrain_docs: 100,
            corpus: CorpusConfig {
                vocab_size: 60,
                num_labels: 6,
                num_docs: 120,
                doc_length: 20,
                labels_per_doc_mean: 1.5,
                label_skew: 0.5,
                split_ratios: [0.8, 0.1, 0.1],
                seed: 11,
            },
            student: ModelSettings {
                hidden_dim: 8,
                lora_rank: 2,
                lora_scale: 8.0,
                clip_norm: 1.0,
            },
            teacher: ModelSettings {
                hidden_dim: 12,
                lora_rank: 2,
                lora_scale: 8.0,
                clip_norm: 0.7,
            },
            generator: ModelSettings {
                hidden_dim: 0,
                lora_rank: 2,
                lora_scale: 8.0,
                clip_norm: 0.7,
            },
            dp_train: DpTrainConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                max_epochs: 2,
                patience: 3,
                sampling_rate: 0.1,
                noise_override: None,
            },
            nonprivate_train: NonPrivateTrainConfig {
                optimizer: Optimizer::AdamWCosine { weight_decay: 0.01 },
                learning_rate: 0.01,
                batch_size: 16,
                max_epochs: 3,
                patience: 3,
            },
            generation: GenerationConfig {
                nucleus_mass: 0.9,
                temperature: 0.8,
                doc_length: 20,
            },
        }
    }

    fn desk_like_cells() -> ExperimentConfig {
        let mut config = tiny_config(PathBuf::from("unused"));
        config.epsilons = vec![2.0, 4.0, 6.0];
        config.seeds = vec![0, 1, 2];
        config.pipelines = vec![
            PipelineKind::DpSmall,
            PipelineKind::DpSynthetic,
            PipelineKind::DpDistil,
            PipelineKind::LoraNoDp,
        ];
        config
    }

    #[test]
    fn grid_arithmetic() {
        let cells = grid_cells(&desk_like_cells());
        assert_eq!(cells.len(), 3 * 3 * 3 + 3);
        // non-private cells sit last and carry an infinite epsilon
        for cell in &cells[27..] {
            assert_eq!(cell.pipeline, PipelineKind::LoraNoDp);
            assert!(cell.epsilon.is_infinite());
        }
        // grid order: epsilon major over seeds within each pipeline
        assert_eq!(cells[0].epsilon, 2.0);
        assert_eq!(cells[0].seed, 0);
        assert_eq!(cells[1].seed, 1);
        assert_eq!(cells[3].epsilon, 4.0);
        // all cell keys and run seeds are distinct
        let mut names: Vec<String> = cells.iter().map(GridCell::dir_name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 30);
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.run_seed(17)).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 30);
    }

    #[test]
    fn toml_round_trip_and_rejections() {
        let config = desk_like_cells();
        let text = toml::to_string(&config).unwrap();
        let parsed = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(parsed, config);

        // unknown top-level keys are a schema mismatch
        let bad = format!("unknown_knob = 3\n{text}");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());

        let mut dup = config.clone();
        dup.seeds = vec![0, 0];
        assert!(dup.validate().is_err());
        let mut empty = config.clone();
        empty.seeds.clear();
        assert!(empty.validate().is_err());
        let mut bad_delta = config.clone();
        bad_delta.delta = 0.0;
        assert!(bad_delta.validate().is_err());
        let mut bad_eps = config;
        bad_eps.epsilons = vec![2.0, -1.0];
        assert!(bad_eps.validate().is_err());
    }

    #[test]
    fn results_csv_round_trips_including_infinities() {
        let table = ResultsTable {
            rows: vec![
                ResultRow {
                    pipeline: PipelineKind::DpSmall,
                    epsilon: 2.0,
                    delta: 1e-5,
                    seed: 0,
                    micro_f1: 0.123456789012345,
                    macro_f1: 0.2,
                    micro_auprc: 0.3,
                    hamming: 0.04,
                    ensemble_auc: 0.51,
                    auc_loss: 0.5,
                    auc_conf: 0.49,
                    auc_entropy: 0.5,
                    auc_margin: 0.52,
                    auc_l2: 0.48,
                    achieved_eps: 1.999_123,
                    wall_seconds: 0.0,
                },
                ResultRow {
                    pipeline: PipelineKind::LoraNoDp,
                    epsilon: f64::INFINITY,
                    delta: 1e-5,
                    seed: 1,
                    micro_f1: 0.7,
                    macro_f1: 0.6,
                    micro_auprc: 0.8,
                    hamming: 0.01,
                    ensemble_auc: 0.56,
                    auc_loss: 0.6,
                    auc_conf: 0.55,
                    auc_entropy: 0.57,
                    auc_margin: 0.54,
                    auc_l2: 0.53,
                    achieved_eps: f64::INFINITY,
                    wall_seconds: 12.5,
                },
            ],
        };
        let text = table.to_csv_string().unwrap();
        let parsed = ResultsTable::from_csv_str(&text).unwrap();
        assert_eq!(parsed, table);

        // header tampering is rejected as a schema mismatch
        let tampered = text.replacen("pipeline", "pipe", 1);
        assert!(ResultsTable::from_csv_str(&tampered).is_err());
    }

    #[test]
    fn grid_runs_resumably_and_deterministically() {
        let workdir = tempfile::tempdir().unwrap();
        let config = tiny_config(workdir.path().join("a"));
        let table = run_experiment_grid(&config).unwrap();
        assert_eq!(table.rows.len(), 4);
        let results_path = config.output_dir.join("results.csv");
        let first = fs::read(&results_path).unwrap();
        let loaded = ResultsTable::load(&results_path).unwrap();
        assert_eq!(loaded, table);

        // resumption must reuse completed rows verbatim: plant a marker
        let marker_dir = config
            .output_dir
            .join("cells")
            .join(table_cell_dir(&config, 0));
        let mut marked = ResultsTable::load(&marker_dir.join("row.csv")).unwrap();
        marked.rows[0].wall_seconds = 42.0;
        marked.save(&marker_dir.join("row.csv")).unwrap();
        let resumed = run_experiment_grid(&config).unwrap();
        assert_eq!(resumed.rows[0].wall_seconds, 42.0);
        assert_eq!(&resumed.rows[1..], &table.rows[1..]);

        // a corrupted row file forces exactly that cell to re-run
        fs::write(marker_dir.join("row.csv"), "garbage").unwrap();
        let repaired = run_experiment_grid(&config).unwrap();
        assert_eq!(repaired, table);

        // a stale row whose key mismatches its cell is also re-run
        let mut stale = ResultsTable::load(&marker_dir.join("row.csv")).unwrap();
        stale.rows[0].seed = 999;
        stale.save(&marker_dir.join("row.csv")).unwrap();
        let repaired = run_experiment_grid(&config).unwrap();
        assert_eq!(repaired, table);

        // a fresh directory reproduces the results file byte for byte
        let mut second = config;
        second.output_dir = workdir.path().join("b");
        run_experiment_grid(&second).unwrap();
        let other = fs::read(second.output_dir.join("results.csv")).unwrap();
        assert_eq!(first, other);
    }

    fn table_cell_dir(config: &ExperimentConfig, index: usize) -> String {
        grid_cells(config)[index].dir_name()
    }

    #[test]
    fn cell_artifacts_are_written() {
        let workdir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(workdir.path().join("out"));
        config.pipelines = vec![PipelineKind::DpDistil];
        config.seeds = vec![0];
        let table = run_experiment_grid(&config).unwrap();
        assert_eq!(table.rows.len(), 1);
        let dir = config
            .output_dir
            .join("cells")
            .join(grid_cells(&config)[0].dir_name());
        for name in [
            "student.params",
            "teacher.params",
            "generator.params",
            "transcripts.json",
            "metrics.json",
            "mia.json",
            "thresholds.json",
            "per_label_f1.csv",
            "gap.json",
            "row.csv",
        ] {
            assert!(dir.join(name).exists(), "{name} missing");
        }
        // transcripts round-trip through their JSON artifact
        let text = fs::read_to_string(dir.join("transcripts.json")).unwrap();
        let transcripts: Vec<(String, crate::dp_optim::TrainingTranscript)> =
            serde_json::from_str(&text).unwrap();
        let names: Vec<&str> = transcripts.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["generator", "teacher", "student"]);
    }

    #[test]
    fn master_seed_env_helper_parses_and_rejects() {
        // the sole test that touches the process environment
        std::env::remove_var(MASTER_SEED_ENV);
        assert_eq!(master_seed_from_env().unwrap(), None);
        std::env::set_var(MASTER_SEED_ENV, "123");
        assert_eq!(master_seed_from_env().unwrap(), Some(123));
        std::env::set_var(MASTER_SEED_ENV, "not-a-seed");
        assert!(master_seed_from_env().is_err());
        std::env::remove_var(MASTER_SEED_ENV);
    }
}
