//! The four training pipelines compared by the laboratory.
//!
//! * `dp-small`: a private student trained directly on the real training
//!   split under the full budget.
//! * `dp-synthetic`: a private generator under the full budget; a synthetic
//!   corpus drawn from it; a non-private student trained on the synthetic
//!   corpus. Releasing the student is post-processing of the generator.
//! * `dp-distil`: the budget splits in half between a private generator and
//!   a private teacher classifier; the non-private student learns from
//!   synthetic documents and the teacher's raw logits on them.
//! * `lora-no-dp`: a non-private student on the real data, the utility
//!   ceiling and the privacy floor.
//!
//! Every pipeline evaluates its student on the real test split and audits it
//! with the membership attack (real training members vs real test
//! non-members). Budgets accompany exactly the three private pipelines.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accountant::{split_budget, PrivacyBudget};
use crate::corpus::{generate_pretrain_docs, label_statistics, Corpus, LabeledDoc};
use crate::distill::{generate_synthetic_corpus, GenerationConfig};
use crate::dp_optim::{
    train_dp, train_nonprivate, DataSplit, DpTrainConfig, NonPrivateTrainConfig, TrainObjective,
    TrainingTranscript,
};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, optimize_thresholds, MetricsReport, ThresholdMode};
use crate::mia::{extract_attack_features, fit_attack_and_report, AttackFeatures, MiaReport};
use crate::model::{
    forward_classifier, init_model, positive_class_weights, sigmoid, ModelArch, ModelKind,
    ModelParams,
};
use crate::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    DpSmall,
    DpSynthetic,
    DpDistil,
    LoraNoDp,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 4] = [
        PipelineKind::DpSmall,
        PipelineKind::DpSynthetic,
        PipelineKind::DpDistil,
        PipelineKind::LoraNoDp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineKind::DpSmall => "dp-small",
            PipelineKind::DpSynthetic => "dp-synthetic",
            PipelineKind::DpDistil => "dp-distil",
            PipelineKind::LoraNoDp => "lora-no-dp",
        }
    }

    pub fn is_private(&self) -> bool {
        !matches!(self, PipelineKind::LoraNoDp)
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp-small" => Ok(PipelineKind::DpSmall),
            "dp-synthetic" => Ok(PipelineKind::DpSynthetic),
            "dp-distil" => Ok(PipelineKind::DpDistil),
            "lora-no-dp" => Ok(PipelineKind::LoraNoDp),
            other => Err(Error::Parse(format!("unknown pipeline '{other}'"))),
        }
    }
}

/// Architecture and clipping knobs of one model role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub hidden_dim: u32,
    pub lora_rank: u32,
    pub lora_scale: f64,
    pub clip_norm: f64,
}

impl ModelSettings {
    fn validate(&self, role: &str) -> Result<()> {
        if self.lora_rank == 0 {
            return Err(Error::InvalidConfig(format!(
                "{role}: lora_rank must be positive"
            )));
        }
        if !self.lora_scale.is_finite() || self.lora_scale <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{role}: lora_scale must be positive and finite"
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{role}: clip_norm must be positive"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub student: ModelSettings,
    pub teacher: ModelSettings,
    pub generator: ModelSettings,
    pub dp_train: DpTrainConfig,
    pub nonprivate_train: NonPrivateTrainConfig,
    pub generation: GenerationConfig,
    /// Weight of the hard-label term in the distillation loss; the remainder
    /// goes to matching the teacher's raw logits.
    pub distill_hard_weight: f64,
    pub threshold_mode: ThresholdMode,
    /// Label-free documents used to estimate the generator's base unigram.
    pub pretrain_docs: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.student.validate("student")?;
        self.teacher.validate("teacher")?;
        self.generator.validate("generator")?;
        if self.generator.hidden_dim != 0 {
            return Err(Error::InvalidConfig(
                "generator models are linear; hidden_dim must be 0".into(),
            ));
        }
        self.generation.validate()?;
        if !(0.0..=1.0).contains(&self.distill_hard_weight) {
            return Err(Error::InvalidConfig(format!(
                "distill_hard_weight {} outside [0, 1]",
                self.distill_hard_weight
            )));
        }
        if self.pretrain_docs == 0 {
            return Err(Error::InvalidConfig(
                "pretrain_docs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a pipeline run produces.
pub struct PipelineOutcome {
    pub kind: PipelineKind,
    pub budget: Option<PrivacyBudget>,
    pub student: ModelParams,
    pub teacher: Option<ModelParams>,
    pub generator: Option<ModelParams>,
    pub synthetic_train: Option<Vec<LabeledDoc>>,
    pub synthetic_val: Option<Vec<LabeledDoc>>,
    pub thresholds: Vec<f64>,
    /// Student evaluation on the real test split.
    pub metrics: MetricsReport,
    /// Membership audit of the student: real train vs real test.
    pub mia: MiaReport,
    /// Named transcripts of every training run, in execution order.
    pub transcripts: Vec<(String, TrainingTranscript)>,
    /// Privacy spent on the real data, summed over private stages;
    /// infinite for the non-private pipeline.
    pub achieved_epsilon: f64,
}

impl PipelineOutcome {
    pub fn transcript(&self, name: &str) -> Option<&TrainingTranscript> {
        self.transcripts
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

fn classifier_arch(settings: &ModelSettings, vocab: u32, labels: u32) -> ModelArch {
    ModelArch {
        kind: ModelKind::Classifier,
        input_dim: vocab,
        hidden_dim: settings.hidden_dim,
        output_dim: labels,
        lora_rank: settings.lora_rank,
        lora_scale: settings.lora_scale,
    }
}

fn generator_arch(settings: &ModelSettings, vocab: u32, labels: u32) -> ModelArch {
    ModelArch {
        kind: ModelKind::Generator,
        input_dim: labels,
        hidden_dim: 0,
        output_dim: vocab,
        lora_rank: settings.lora_rank,
        lora_scale: settings.lora_scale,
    }
}

/// Sigmoid label probabilities of every document under a classifier.
pub fn classifier_probabilities(
    params: &ModelParams,
    docs: &[LabeledDoc],
) -> Result<Vec<Vec<f64>>> {
    docs.iter()
        .map(|doc| {
            Ok(forward_classifier(params, doc)?
                .into_iter()
                .map(sigmoid)
                .collect())
        })
        .collect()
}

/// Raw logits of every document under a classifier.
pub fn classifier_logits(params: &ModelParams, docs: &[LabeledDoc]) -> Result<Vec<Vec<f64>>> {
    docs.iter().map(|doc| forward_classifier(params, doc)).collect()
}

/// Membership-attack features of every document under a classifier.
pub fn attack_features_for(
    params: &ModelParams,
    docs: &[LabeledDoc],
) -> Result<Vec<AttackFeatures>> {
    docs.iter()
        .map(|doc| {
            let logits = forward_classifier(params, doc)?;
            extract_attack_features(&logits, &doc.labels)
        })
        .collect()
}

fn label_sets(docs: &[LabeledDoc]) -> Vec<BTreeSet<u32>> {
    docs.iter().map(|d| d.labels.clone()).collect()
}

// A noise override voids accounting, so the run carries no guarantee.
fn spent_epsilon(transcript: &TrainingTranscript) -> f64 {
    transcript.achieved_epsilon.unwrap_or(f64::INFINITY)
}

/// Thresholds on a validation split, then metrics on the real test split and
/// the membership audit (real train members vs real test non-members).
fn evaluate_student(
    student: &ModelParams,
    corpus: &Corpus,
    threshold_docs: &[LabeledDoc],
    mode: ThresholdMode,
    seed: u64,
) -> Result<(Vec<f64>, MetricsReport, MiaReport)> {
    let val_probs = classifier_probabilities(student, threshold_docs)?;
    let thresholds = optimize_thresholds(&val_probs, &label_sets(threshold_docs), mode)?;

    let test_probs = classifier_probabilities(student, &corpus.test)?;
    let metrics = compute_metrics(&test_probs, &label_sets(&corpus.test), &thresholds)?;

    let member_features = attack_features_for(student, &corpus.train)?;
    let nonmember_features = attack_features_for(student, &corpus.test)?;
    let mia = fit_attack_and_report(
        &member_features,
        &nonmember_features,
        stream::mix_str(seed, "mia-audit"),
    )?;
    Ok((thresholds, metrics, mia))
}

/// Trains the private generator and draws synthetic train/validation corpora
/// that reuse the real splits' label sets one-for-one.
struct SyntheticStage {
    generator: ModelParams,
    transcript: TrainingTranscript,
    train_docs: Vec<LabeledDoc>,
    val_docs: Vec<LabeledDoc>,
}

fn run_synthetic_stage(
    corpus: &Corpus,
    budget: &PrivacyBudget,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SyntheticStage> {
    let vocab = corpus.config.vocab_size;
    let labels = corpus.config.num_labels;
    let pretrain = generate_pretrain_docs(&corpus.config, cfg.pretrain_docs)?;
    let arch = generator_arch(&cfg.generator, vocab, labels);
    let mut generator = init_model(&arch, &pretrain, stream::mix_str(seed, "generator"))?;
    let transcript = train_dp(
        &mut generator,
        &DataSplit::real(&corpus.train),
        &DataSplit::real(&corpus.validation),
        &TrainObjective::GeneratorXent,
        budget,
        &cfg.dp_train,
        cfg.generator.clip_norm,
        stream::mix_str(seed, "generator-train"),
    )?;
    let train_docs = generate_synthetic_corpus(
        &generator,
        &label_sets(&corpus.train),
        &cfg.generation,
        stream::mix_str(seed, "synthetic-train"),
    )?;
    let val_docs = generate_synthetic_corpus(
        &generator,
        &label_sets(&corpus.validation),
        &cfg.generation,
        stream::mix_str(seed, "synthetic-val"),
    )?;
    Ok(SyntheticStage {
        generator,
        transcript,
        train_docs,
        val_docs,
    })
}

/// Runs one pipeline end to end. Private pipelines require a budget; the
/// non-private one requires its absence.
pub fn run_pipeline(
    kind: PipelineKind,
    corpus: &Corpus,
    budget: Option<PrivacyBudget>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    for (split, name) in [
        (&corpus.train, "train"),
        (&corpus.validation, "validation"),
        (&corpus.test, "test"),
    ] {
        if split.is_empty() {
            return Err(Error::InvalidInput(format!("{name} split is empty")));
        }
    }
    match (kind.is_private(), &budget) {
        (true, None) => {
            return Err(Error::InvalidConfig(format!(
                "pipeline {kind} requires a privacy budget"
            )))
        }
        (false, Some(_)) => {
            return Err(Error::InvalidConfig(format!(
                "pipeline {kind} takes no privacy budget"
            )))
        }
        _ => {}
    }

    let vocab = corpus.config.vocab_size;
    let labels = corpus.config.num_labels;
    let student_arch = classifier_arch(&cfg.student, vocab, labels);

    match kind {
        PipelineKind::DpSmall => {
            let budget = budget.expect("checked above");
            let weights = positive_class_weights(&label_statistics(&corpus.train, labels)?)?;
            let mut student =
                init_model(&student_arch, &[], stream::mix_str(seed, "student"))?;
            let transcript = train_dp(
                &mut student,
                &DataSplit::real(&corpus.train),
                &DataSplit::real(&corpus.validation),
                &TrainObjective::WeightedBce { weights },
                &budget,
                &cfg.dp_train,
                cfg.student.clip_norm,
                stream::mix_str(seed, "student-train"),
            )?;
            let achieved = spent_epsilon(&transcript);
            let (thresholds, metrics, mia) = evaluate_student(
                &student,
                corpus,
                &corpus.validation,
                cfg.threshold_mode,
                seed,
            )?;
            Ok(PipelineOutcome {
                kind,
                budget: Some(budget),
                student,
                teacher: None,
                generator: None,
                synthetic_train: None,
                synthetic_val: None,
                thresholds,
                metrics,
                mia,
                transcripts: vec![("student".into(), transcript)],
                achieved_epsilon: achieved,
            })
        }
        PipelineKind::LoraNoDp => {
            let weights = positive_class_weights(&label_statistics(&corpus.train, labels)?)?;
            let mut student =
                init_model(&student_arch, &[], stream::mix_str(seed, "student"))?;
            let transcript = train_nonprivate(
                &mut student,
                &DataSplit::real(&corpus.train),
                &DataSplit::real(&corpus.validation),
                &TrainObjective::WeightedBce { weights },
                &cfg.nonprivate_train,
                stream::mix_str(seed, "student-train"),
            )?;
            let (thresholds, metrics, mia) = evaluate_student(
                &student,
                corpus,
                &corpus.validation,
                cfg.threshold_mode,
                seed,
            )?;
            Ok(PipelineOutcome {
                kind,
                budget: None,
                student,
                teacher: None,
                generator: None,
                synthetic_train: None,
                synthetic_val: None,
                thresholds,
                metrics,
                mia,
                transcripts: vec![("student".into(), transcript)],
                achieved_epsilon: f64::INFINITY,
            })
        }
        PipelineKind::DpSynthetic => {
            let budget = budget.expect("checked above");
            let stage = run_synthetic_stage(corpus, &budget, cfg, seed)?;
            let achieved = spent_epsilon(&stage.transcript);

            // the student sees synthetic documents only
            let weights =
                positive_class_weights(&label_statistics(&stage.train_docs, labels)?)?;
            let mut student =
                init_model(&student_arch, &[], stream::mix_str(seed, "student"))?;
            let transcript = train_nonprivate(
                &mut student,
                &DataSplit::synthetic(&stage.train_docs),
                &DataSplit::synthetic(&stage.val_docs),
                &TrainObjective::WeightedBce { weights },
                &cfg.nonprivate_train,
                stream::mix_str(seed, "student-train"),
            )?;
            let (thresholds, metrics, mia) = evaluate_student(
                &student,
                corpus,
                &stage.val_docs,
                cfg.threshold_mode,
                seed,
            )?;
            Ok(PipelineOutcome {
                kind,
                budget: Some(budget),
                student,
                teacher: None,
                generator: Some(stage.generator),
                synthetic_train: Some(stage.train_docs),
                synthetic_val: Some(stage.val_docs),
                thresholds,
                metrics,
                mia,
                transcripts: vec![
                    ("generator".into(), stage.transcript),
                    ("student".into(), transcript),
                ],
                achieved_epsilon: achieved,
            })
        }
        PipelineKind::DpDistil => {
            let budget = budget.expect("checked above");
            let half = split_budget(&budget, 2)?;
            let (generator_budget, teacher_budget) = (half, half);

            let stage = run_synthetic_stage(corpus, &generator_budget, cfg, seed)?;

            // private teacher classifier on the real data under the other half
            let teacher_arch = classifier_arch(&cfg.teacher, vocab, labels);
            let real_weights =
                positive_class_weights(&label_statistics(&corpus.train, labels)?)?;
            let mut teacher =
                init_model(&teacher_arch, &[], stream::mix_str(seed, "teacher"))?;
            let teacher_transcript = train_dp(
                &mut teacher,
                &DataSplit::real(&corpus.train),
                &DataSplit::real(&corpus.validation),
                &TrainObjective::WeightedBce {
                    weights: real_weights,
                },
                &teacher_budget,
                &cfg.dp_train,
                cfg.teacher.clip_norm,
                stream::mix_str(seed, "teacher-train"),
            )?;

            let spent = spent_epsilon(&stage.transcript) + spent_epsilon(&teacher_transcript);
            if spent.is_finite() && spent > budget.epsilon {
                return Err(Error::Calibration(format!(
                    "stages spent {spent} against a budget of {}",
                    budget.epsilon
                )));
            }

            // soft labels: the teacher's raw logits on the synthetic corpora
            let train_soft = classifier_logits(&teacher, &stage.train_docs)?;
            let val_soft = classifier_logits(&teacher, &stage.val_docs)?;

            let weights =
                positive_class_weights(&label_statistics(&stage.train_docs, labels)?)?;
            let mut student =
                init_model(&student_arch, &[], stream::mix_str(seed, "student"))?;
            let objective = TrainObjective::Distillation {
                hard_weight: cfg.distill_hard_weight,
                weights,
            };
            let transcript = train_nonprivate(
                &mut student,
                &DataSplit {
                    docs: &stage.train_docs,
                    teacher_logits: Some(&train_soft),
                    is_real: false,
                },
                &DataSplit {
                    docs: &stage.val_docs,
                    teacher_logits: Some(&val_soft),
                    is_real: false,
                },
                &objective,
                &cfg.nonprivate_train,
                stream::mix_str(seed, "student-train"),
            )?;
            let (thresholds, metrics, mia) = evaluate_student(
                &student,
                corpus,
                &stage.val_docs,
                cfg.threshold_mode,
                seed,
            )?;
            Ok(PipelineOutcome {
                kind,
                budget: Some(budget),
                student,
                teacher: Some(teacher),
                generator: Some(stage.generator),
                synthetic_train: Some(stage.train_docs),
                synthetic_val: Some(stage.val_docs),
                thresholds,
                metrics,
                mia,
                transcripts: vec![
                    ("generator".into(), stage.transcript),
                    ("teacher".into(), teacher_transcript),
                    ("student".into(), transcript),
                ],
                achieved_epsilon: spent,
            })
        }
    }
}

/// Test-split comparison between the distillation teacher and its student as
/// trained functions, both measured under the same protocol: thresholds
/// tuned on the real validation split, metrics on the real test split.
///
/// This is a diagnostic, not a release path, so the student may be measured
/// against real validation data here; its reported pipeline metrics still
/// come from synthetic-only threshold tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherStudentGap {
    pub teacher_micro_f1: f64,
    pub student_micro_f1: f64,
    /// student minus teacher
    pub micro_f1_gap: f64,
    pub teacher_macro_f1: f64,
    pub student_macro_f1: f64,
    pub macro_f1_gap: f64,
}

pub fn compare_teacher_student(
    outcome: &PipelineOutcome,
    corpus: &Corpus,
    mode: ThresholdMode,
) -> Result<TeacherStudentGap> {
    let teacher = outcome.teacher.as_ref().ok_or_else(|| {
        Error::InvalidInput(format!(
            "pipeline {} has no teacher to compare against",
            outcome.kind
        ))
    })?;
    let evaluate = |params: &ModelParams| -> Result<MetricsReport> {
        let val_probs = classifier_probabilities(params, &corpus.validation)?;
        let thresholds = optimize_thresholds(&val_probs, &label_sets(&corpus.validation), mode)?;
        let test_probs = classifier_probabilities(params, &corpus.test)?;
        compute_metrics(&test_probs, &label_sets(&corpus.test), &thresholds)
    };
    let teacher_metrics = evaluate(teacher)?;
    let student_metrics = evaluate(&outcome.student)?;
    Ok(TeacherStudentGap {
        teacher_micro_f1: teacher_metrics.micro_f1,
        student_micro_f1: student_metrics.micro_f1,
        micro_f1_gap: student_metrics.micro_f1 - teacher_metrics.micro_f1,
        teacher_macro_f1: teacher_metrics.macro_f1,
        student_macro_f1: student_metrics.macro_f1,
        macro_f1_gap: student_metrics.macro_f1 - teacher_metrics.macro_f1,
    })
}
