//! A small experiment grid end to end: every pipeline at two budgets and two
//! seeds, persisted resumably, summarized with pass/fail checks.

use dplab::corpus::CorpusConfig;
use dplab::distill::GenerationConfig;
use dplab::dp_optim::{DpTrainConfig, NonPrivateTrainConfig, Optimizer};
use dplab::experiment::{grid_cells, run_experiment_grid, ExperimentConfig};
use dplab::metrics::ThresholdMode;
use dplab::pipelines::{ModelSettings, PipelineKind};
use dplab::report::{emit_report, write_report};

fn main() -> dplab::Result<()> {
    let output_dir = std::env::temp_dir().join("dplab_grid_example");
    let config = ExperimentConfig {
        output_dir: output_dir.clone(),
        master_seed: 17,
        epsilons: vec![2.0, 6.0],
        delta: 1e-5,
        seeds: vec![0, 1],
        pipelines: vec![
            PipelineKind::DpSmall,
            PipelineKind::DpSynthetic,
            PipelineKind::DpDistil,
            PipelineKind::LoraNoDp,
        ],
        record_timing: false,
        threshold_mode: ThresholdMode::PerLabel,
        distill_hard_weight: 0.0,
        pretrain_docs: 300,
        corpus: CorpusConfig {
            vocab_size: 150,
            num_labels: 8,
            num_docs: 400,
            doc_length: 30,
            labels_per_doc_mean: 2.0,
            label_skew: 0.8,
            split_ratios: [0.8, 0.1, 0.1],
            seed: 11,
        },
        student: ModelSettings {
            hidden_dim: 16,
            lora_rank: 2,
            lora_scale: 8.0,
            clip_norm: 1.0,
        },
        teacher: ModelSettings {
            hidden_dim: 24,
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
            max_epochs: 6,
            patience: 3,
            sampling_rate: 0.05,
            noise_override: None,
        },
        nonprivate_train: NonPrivateTrainConfig {
            optimizer: Optimizer::AdamWCosine { weight_decay: 0.01 },
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 8,
            patience: 3,
        },
        generation: GenerationConfig {
            nucleus_mass: 0.9,
            temperature: 0.8,
            doc_length: 30,
        },
    };

    let cells = grid_cells(&config);
    println!(
        "running {} cells into {} (already-finished cells are skipped)",
        cells.len(),
        output_dir.display()
    );
    let table = run_experiment_grid(&config)?;
    println!("results table has {} rows", table.rows.len());

    let report = emit_report(&table)?;
    write_report(&report, &output_dir)?;
    print!("{}", report.markdown);
    println!(
        "\nwrote results.csv, report.md, summary.csv under {}",
        output_dir.display()
    );

    // cell artifacts back the CSV rows with full detail
    let first = output_dir.join("cells").join(cells[0].dir_name());
    println!("first cell's artifacts:");
    for entry in std::fs::read_dir(&first)? {
        println!("  {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
