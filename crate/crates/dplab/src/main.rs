//! Thin command-line front end over the library. The richer entry points
//! live in `examples/`; this binary covers grid execution, result
//! summarization, noise calibration, and membership audits of saved models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dplab::accountant::{achieved_epsilon, calibrate_noise, PrivacyBudget};
use dplab::corpus::load_corpus;
use dplab::experiment::{
    master_seed_from_env, run_experiment_grid, ExperimentConfig, ResultsTable,
};
use dplab::mia::{fit_attack_and_report, FEATURE_NAMES};
use dplab::model::load_params;
use dplab::pipelines::attack_features_for;
use dplab::report::{emit_report, write_report};
use dplab::stream;

#[derive(Parser)]
#[command(
    name = "dplab",
    version,
    about = "Differentially private training pipelines with privacy accounting and membership audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment grid described by a TOML config file.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
    },
    /// Summarize a results CSV and check its qualitative claims.
    Report {
        /// Path to a results CSV produced by `run`.
        results: PathBuf,
        /// Directory for report.md and summary.csv (defaults to the
        /// results file's directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Solve for the noise multiplier that meets a privacy budget.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        sampling_rate: f64,
        #[arg(long)]
        steps: u64,
    },
    /// Run the membership attack against saved model parameters.
    Audit {
        /// Path to a parameter container.
        #[arg(long)]
        params: PathBuf,
        /// Path to the corpus whose train/test splits define members and
        /// non-members.
        #[arg(long)]
        corpus: PathBuf,
        /// Audit seed for balancing and fold assignment.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional CSV of raw per-example attack features.
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // exit codes: 0 success, 1 validation failure (including bad arguments),
    // 2 reserved for failed checks in report mode
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if err.use_stderr() => {
            let _ = err.print();
            return ExitCode::from(1);
        }
        Err(help_or_version) => {
            let _ = help_or_version.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> dplab::Result<ExitCode> {
    match cli.command {
        Command::Run { config } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = master_seed_from_env()? {
                eprintln!("master seed {seed} taken from the environment");
                config.master_seed = seed;
            }
            let table = run_experiment_grid(&config)?;
            let report = emit_report(&table)?;
            write_report(&report, &config.output_dir)?;
            println!(
                "{} rows -> {}",
                table.rows.len(),
                config.output_dir.join("results.csv").display()
            );
            print!("{}", report.markdown);
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { results, out_dir } => {
            let table = ResultsTable::load(&results)?;
            let report = emit_report(&table)?;
            let dir = match out_dir {
                Some(dir) => dir,
                None => results
                    .parent()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(".")),
            };
            write_report(&report, &dir)?;
            print!("{}", report.markdown);
            if report.flags.all_pass() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Command::Calibrate {
            epsilon,
            delta,
            sampling_rate,
            steps,
        } => {
            let budget = PrivacyBudget::new(epsilon, delta)?;
            let sigma = calibrate_noise(&budget, sampling_rate, steps)?;
            let (achieved, order) = achieved_epsilon(sampling_rate, sigma, steps, delta)?;
            println!(
                "noise multiplier {sigma} meets ({epsilon}, {delta}) over {steps} steps at q={sampling_rate}: achieved epsilon {achieved} (order {order})"
            );
            println!(
                "{}",
                serde_json::json!({
                    "noise_multiplier": sigma,
                    "target_epsilon": epsilon,
                    "target_delta": delta,
                    "sampling_rate": sampling_rate,
                    "steps": steps,
                    "achieved_epsilon": achieved,
                    "order": order,
                })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit {
            params,
            corpus,
            seed,
            features_out,
        } => {
            let model = load_params(&params)?;
            let corpus = load_corpus(&corpus)?;
            let members = attack_features_for(&model, &corpus.train)?;
            let nonmembers = attack_features_for(&model, &corpus.test)?;
            if let Some(path) = features_out {
                let mut text = format!("member,{}\n", FEATURE_NAMES.join(","));
                for (side, rows) in [(1u8, &members), (0u8, &nonmembers)] {
                    for features in rows {
                        let values: Vec<String> =
                            features.as_array().iter().map(f64::to_string).collect();
                        text.push_str(&format!("{side},{}\n", values.join(",")));
                    }
                }
                std::fs::write(path, text)?;
            }
            let report =
                fit_attack_and_report(&members, &nonmembers, stream::mix_str(seed, "mia-audit"))?;
            println!(
                "ensemble AUC {:.4} over {} members / {} non-members",
                report.ensemble_auc, report.members_used, report.nonmembers_used
            );
            println!(
                "{}",
                serde_json::to_string(&report)
                    .map_err(|e| dplab::Error::Parse(format!("json encode: {e}")))?
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
