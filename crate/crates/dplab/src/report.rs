//! Summarizes a results table: per-(pipeline, epsilon) means and standard
//! deviations over seeds, rendered as markdown and CSV, plus pass/fail flags
//! for the qualitative claims a finished grid is expected to exhibit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ResultRow, ResultsTable};
use crate::pipelines::PipelineKind;

/// Mean-over-seeds ensemble AUC must land in this window for every private
/// (pipeline, epsilon) group.
pub const MIA_AUC_WINDOW: (f64, f64) = (0.45, 0.55);

/// Tolerance for the budget-utility ordering: the largest budget may trail
/// the smallest by at most this much mean micro-F1.
pub const MONOTONE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation over seeds; zero for a single seed.
    pub std: f64,
}

fn stat(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Stat {
        mean,
        std: var.sqrt(),
    }
}

/// Seed-aggregated view of one (pipeline, epsilon) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub pipeline: PipelineKind,
    pub epsilon: f64,
    pub seeds: usize,
    pub micro_f1: Stat,
    pub macro_f1: Stat,
    pub micro_auprc: Stat,
    pub hamming: Stat,
    pub ensemble_auc: Stat,
    pub achieved_eps_mean: f64,
}

/// Tri-state check: `None` when the table lacks the rows to evaluate it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceFlags {
    /// Non-private mean micro-F1 strictly exceeds every private group's.
    pub nonprivate_dominates: Option<bool>,
    /// For each budget-sensitive pipeline with at least two budgets, the
    /// largest budget's mean micro-F1 trails the smallest's by at most the
    /// tolerance.
    pub budget_monotone: Option<bool>,
    /// Every private group's mean ensemble AUC sits in the protection window.
    pub mia_protected: Option<bool>,
}

impl AcceptanceFlags {
    pub fn all_pass(&self) -> bool {
        [
            self.nonprivate_dominates,
            self.budget_monotone,
            self.mia_protected,
        ]
        .iter()
        .all(|flag| *flag != Some(false))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    pub flags: AcceptanceFlags,
    pub markdown: String,
    pub summary_csv: String,
}

fn group_rows(table: &ResultsTable) -> Vec<(PipelineKind, f64, Vec<&ResultRow>)> {
    let mut groups: Vec<(PipelineKind, f64, Vec<&ResultRow>)> = Vec::new();
    for row in &table.rows {
        let key = (row.pipeline, row.epsilon.to_bits());
        match groups
            .iter_mut()
            .find(|(p, e, _)| (*p, e.to_bits()) == key)
        {
            Some((_, _, rows)) => rows.push(row),
            None => groups.push((row.pipeline, row.epsilon, vec![row])),
        }
    }
    groups
}

fn summarize(groups: &[(PipelineKind, f64, Vec<&ResultRow>)]) -> Vec<GroupSummary> {
    groups
        .iter()
        .map(|(pipeline, epsilon, rows)| {
            let pick = |f: fn(&ResultRow) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r)).collect() };
            GroupSummary {
                pipeline: *pipeline,
                epsilon: *epsilon,
                seeds: rows.len(),
                micro_f1: stat(&pick(|r| r.micro_f1)),
                macro_f1: stat(&pick(|r| r.macro_f1)),
                micro_auprc: stat(&pick(|r| r.micro_auprc)),
                hamming: stat(&pick(|r| r.hamming)),
                ensemble_auc: stat(&pick(|r| r.ensemble_auc)),
                achieved_eps_mean: stat(&pick(|r| r.achieved_eps)).mean,
            }
        })
        .collect()
}

fn compute_flags(groups: &[GroupSummary]) -> AcceptanceFlags {
    let private: Vec<&GroupSummary> = groups.iter().filter(|g| g.pipeline.is_private()).collect();
    let nonprivate: Vec<&GroupSummary> =
        groups.iter().filter(|g| !g.pipeline.is_private()).collect();

    let nonprivate_dominates = if private.is_empty() || nonprivate.is_empty() {
        None
    } else {
        Some(nonprivate.iter().all(|np| {
            private
                .iter()
                .all(|dp| np.micro_f1.mean > dp.micro_f1.mean)
        }))
    };

    // ordering claim applies to the pipelines whose utility should grow
    // with the budget: direct private training and distillation
    let mut monotone_evaluable = false;
    let mut monotone_ok = true;
    for pipeline in [PipelineKind::DpSmall, PipelineKind::DpDistil] {
        let mut of_kind: Vec<&&GroupSummary> =
            private.iter().filter(|g| g.pipeline == pipeline).collect();
        if of_kind.len() < 2 {
            continue;
        }
        monotone_evaluable = true;
        of_kind.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        let lowest = of_kind.first().unwrap();
        let highest = of_kind.last().unwrap();
        if highest.micro_f1.mean < lowest.micro_f1.mean - MONOTONE_TOLERANCE {
            monotone_ok = false;
        }
    }
    let budget_monotone = monotone_evaluable.then_some(monotone_ok);

    let mia_protected = if private.is_empty() {
        None
    } else {
        Some(private.iter().all(|g| {
            g.ensemble_auc.mean >= MIA_AUC_WINDOW.0 && g.ensemble_auc.mean <= MIA_AUC_WINDOW.1
        }))
    };

    AcceptanceFlags {
        nonprivate_dominates,
        budget_monotone,
        mia_protected,
    }
}

fn fmt_stat(s: &Stat) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.std)
}

fn flag_line(name: &str, detail: &str, flag: Option<bool>) -> String {
    let verdict = match flag {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIPPED (not evaluable from this table)",
    };
    format!("- **{name}**: {verdict} - {detail}\n")
}

fn render_markdown(groups: &[GroupSummary], flags: &AcceptanceFlags) -> String {
    let mut md = String::new();
    md.push_str("# Experiment summary\n\n");
    md.push_str("Mean ± population standard deviation over seeds.\n\n");
    md.push_str(
        "| pipeline | epsilon | seeds | micro-F1 | macro-F1 | micro-AUPRC | hamming | MIA AUC | achieved eps |\n",
    );
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for g in groups {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {:.4} |",
            g.pipeline,
            g.epsilon,
            g.seeds,
            fmt_stat(&g.micro_f1),
            fmt_stat(&g.macro_f1),
            fmt_stat(&g.micro_auprc),
            fmt_stat(&g.hamming),
            fmt_stat(&g.ensemble_auc),
            g.achieved_eps_mean,
        );
    }
    md.push_str("\n## Checks\n\n");
    md.push_str(&flag_line(
        "non-private dominance",
        "the non-private pipeline's mean micro-F1 strictly exceeds every private group's",
        flags.nonprivate_dominates,
    ));
    md.push_str(&flag_line(
        "budget ordering",
        &format!(
            "for dp-small and dp-distil, mean micro-F1 at the largest budget trails the smallest by at most {MONOTONE_TOLERANCE}"
        ),
        flags.budget_monotone,
    ));
    md.push_str(&flag_line(
        "membership protection",
        &format!(
            "every private group's mean ensemble AUC lies in [{}, {}]",
            MIA_AUC_WINDOW.0, MIA_AUC_WINDOW.1
        ),
        flags.mia_protected,
    ));
    md
}

fn render_summary_csv(groups: &[GroupSummary]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "pipeline",
            "epsilon",
            "seeds",
            "micro_f1_mean",
            "micro_f1_std",
            "macro_f1_mean",
            "macro_f1_std",
            "micro_auprc_mean",
            "micro_auprc_std",
            "hamming_mean",
            "hamming_std",
            "ensemble_auc_mean",
            "ensemble_auc_std",
            "achieved_eps_mean",
        ])
        .map_err(|e| Error::Parse(format!("csv write: {e}")))?;
    for g in groups {
        writer
            .write_record([
                g.pipeline.to_string(),
                format!("{}", g.epsilon),
                g.seeds.to_string(),
                format!("{}", g.micro_f1.mean),
                format!("{}", g.micro_f1.std),
                format!("{}", g.macro_f1.mean),
                format!("{}", g.macro_f1.std),
                format!("{}", g.micro_auprc.mean),
                format!("{}", g.micro_auprc.std),
                format!("{}", g.hamming.mean),
                format!("{}", g.hamming.std),
                format!("{}", g.ensemble_auc.mean),
                format!("{}", g.ensemble_auc.std),
                format!("{}", g.achieved_eps_mean),
            ])
            .map_err(|e| Error::Parse(format!("csv write: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Parse(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(format!("csv utf8: {e}")))
}

/// Aggregates a non-empty results table into per-group statistics, rendered
/// summaries, and acceptance flags.
pub fn emit_report(table: &ResultsTable) -> Result<Report> {
    if table.rows.is_empty() {
        return Err(Error::InvalidInput("results table is empty".into()));
    }
    let groups = summarize(&group_rows(table));
    let flags = compute_flags(&groups);
    let markdown = render_markdown(&groups, &flags);
    let summary_csv = render_summary_csv(&groups)?;
    Ok(Report {
        groups,
        flags,
        markdown,
        summary_csv,
    })
}

/// Writes `report.md` and `summary.csv` into a directory.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.md"), &report.markdown)?;
    fs::write(dir.join("summary.csv"), &report.summary_csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pipeline: PipelineKind, epsilon: f64, seed: u64, micro_f1: f64, auc: f64) -> ResultRow {
        ResultRow {
            pipeline,
            epsilon,
            delta: 1e-5,
            seed,
            micro_f1,
            macro_f1: micro_f1 * 0.9,
            micro_auprc: micro_f1 * 1.05,
            hamming: 0.1,
            ensemble_auc: auc,
            auc_loss: auc,
            auc_conf: auc,
            auc_entropy: auc,
            auc_margin: auc,
            auc_l2: auc,
            achieved_eps: if epsilon.is_finite() { epsilon * 0.99 } else { epsilon },
            wall_seconds: 0.0,
        }
    }

    fn healthy_table() -> ResultsTable {
        let mut rows = Vec::new();
        for (eps, base) in [(2.0, 0.40), (6.0, 0.45)] {
            for seed in 0..3u64 {
                rows.push(row(
                    PipelineKind::DpSmall,
                    eps,
                    seed,
                    base + seed as f64 * 0.01,
                    0.49 + seed as f64 * 0.01,
                ));
                rows.push(row(
                    PipelineKind::DpDistil,
                    eps,
                    seed,
                    base - 0.02 + seed as f64 * 0.01,
                    0.5,
                ));
            }
        }
        for seed in 0..3u64 {
            rows.push(row(
                PipelineKind::LoraNoDp,
                f64::INFINITY,
                seed,
                0.70 + seed as f64 * 0.01,
                0.60,
            ));
        }
        ResultsTable { rows }
    }

    #[test]
    fn means_match_an_independent_recompute() {
        let table = healthy_table();
        let report = emit_report(&table).unwrap();
        for group in &report.groups {
            let values: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| {
                    r.pipeline == group.pipeline && r.epsilon.to_bits() == group.epsilon.to_bits()
                })
                .map(|r| r.micro_f1)
                .collect();
            assert_eq!(values.len(), group.seeds);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / values.len() as f64;
            assert!((group.micro_f1.mean - mean).abs() <= 1e-12);
            assert!((group.micro_f1.std - var.sqrt()).abs() <= 1e-12);
        }
        // groups appear in first-row order: dp-small then dp-distil per
        // epsilon, non-private last
        assert_eq!(report.groups.len(), 5);
        assert_eq!(report.groups[0].pipeline, PipelineKind::DpSmall);
        assert_eq!(report.groups[4].pipeline, PipelineKind::LoraNoDp);
    }

    #[test]
    fn healthy_table_passes_all_flags() {
        let report = emit_report(&healthy_table()).unwrap();
        assert_eq!(report.flags.nonprivate_dominates, Some(true));
        assert_eq!(report.flags.budget_monotone, Some(true));
        assert_eq!(report.flags.mia_protected, Some(true));
        assert!(report.flags.all_pass());
        assert!(report.markdown.contains("PASS"));
        assert!(!report.markdown.contains("FAIL"));
        assert!(report.summary_csv.lines().count() == 6);
    }

    #[test]
    fn flags_catch_each_failure_mode() {
        // dominance failure: a DP group beats the non-private mean
        let mut table = healthy_table();
        for r in table.rows.iter_mut().filter(|r| r.pipeline == PipelineKind::DpSmall) {
            r.micro_f1 = 0.95;
        }
        let report = emit_report(&table).unwrap();
        assert_eq!(report.flags.nonprivate_dominates, Some(false));
        assert!(!report.flags.all_pass());
        assert!(report.markdown.contains("FAIL"));

        // ordering failure: the largest budget collapses
        let mut table = healthy_table();
        for r in table
            .rows
            .iter_mut()
            .filter(|r| r.pipeline == PipelineKind::DpSmall && r.epsilon == 6.0)
        {
            r.micro_f1 = 0.10;
        }
        let report = emit_report(&table).unwrap();
        assert_eq!(report.flags.budget_monotone, Some(false));

        // protection failure: a private group's audit AUC drifts high
        let mut table = healthy_table();
        for r in table
            .rows
            .iter_mut()
            .filter(|r| r.pipeline == PipelineKind::DpDistil && r.epsilon == 2.0)
        {
            r.ensemble_auc = 0.65;
        }
        let report = emit_report(&table).unwrap();
        assert_eq!(report.flags.mia_protected, Some(false));
    }

    #[test]
    fn missing_rows_leave_flags_unevaluated() {
        // only the non-private pipeline: nothing private to compare with
        let table = ResultsTable {
            rows: (0..2u64)
                .map(|s| row(PipelineKind::LoraNoDp, f64::INFINITY, s, 0.7, 0.6))
                .collect(),
        };
        let report = emit_report(&table).unwrap();
        assert_eq!(report.flags.nonprivate_dominates, None);
        assert_eq!(report.flags.budget_monotone, None);
        assert_eq!(report.flags.mia_protected, None);
        assert!(report.flags.all_pass(), "unevaluable checks do not fail");
        assert!(report.markdown.contains("SKIPPED"));

        // a single budget cannot exhibit an ordering
        let table = ResultsTable {
            rows: (0..2u64)
                .map(|s| row(PipelineKind::DpSmall, 4.0, s, 0.4, 0.5))
                .collect(),
        };
        let report = emit_report(&table).unwrap();
        assert_eq!(report.flags.budget_monotone, None);
        assert_eq!(report.flags.mia_protected, Some(true));

        assert!(emit_report(&ResultsTable::default()).is_err());
    }

    #[test]
    fn single_seed_stds_are_zero() {
        let table = ResultsTable {
            rows: vec![
                row(PipelineKind::DpSmall, 2.0, 0, 0.41, 0.5),
                row(PipelineKind::DpSmall, 6.0, 0, 0.44, 0.5),
            ],
        };
        let report = emit_report(&table).unwrap();
        for group in &report.groups {
            assert_eq!(group.seeds, 1);
            assert_eq!(group.micro_f1.std, 0.0);
            assert_eq!(group.ensemble_auc.std, 0.0);
        }
    }

    #[test]
    fn report_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let report = emit_report(&healthy_table()).unwrap();
        write_report(&report, dir.path()).unwrap();
        let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert_eq!(md, report.markdown);
        assert!(dir.path().join("summary.csv").exists());
    }
}
