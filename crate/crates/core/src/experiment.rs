//! End-to-end pipeline: data, warm-up, staged training, evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{evaluate, generate_dataset, make_warmup_demonstrations, Dataset, EnvError, MetricReport, Split, TaskInstance};
use crate::optim::{CheckpointReason, OptimError, Stage, StepReport, Trainer};
use crate::policy::{PolicyError, ToyPolicy, WarmupReport};
use crate::config::RunConfig;
use crate::similarity::Scorer;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset, EnvError> {
    generate_dataset(&cfg.env, cfg.dataset_seed())
}

pub fn initial_policy(cfg: &RunConfig) -> ToyPolicy {
    ToyPolicy::new(
        cfg.env.vocab(),
        cfg.env.feature_layout().dim(),
        cfg.warmup.hidden,
        cfg.init_seed(),
    )
}

/// Fits a fresh policy to the (visually biased) warm-up demonstrations.
pub fn warmup(cfg: &RunConfig, dataset: &Dataset) -> Result<(ToyPolicy, WarmupReport), ExperimentError> {
    let demos = make_warmup_demonstrations(dataset, cfg.env.visual_bias, cfg.demo_seed())?;
    let mut policy = initial_policy(cfg);
    let report = policy.warmup_fit(&demos, cfg.warmup.epochs, cfg.warmup.learning_rate)?;
    Ok((policy, report))
}

/// Mean answer-head entropy over instances.
pub fn mean_answer_entropy(policy: &ToyPolicy, instances: &[TaskInstance]) -> Result<f64, PolicyError> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for inst in instances {
        sum += policy.answer_entropy(&inst.features)?;
    }
    Ok(sum / instances.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: String,
    pub report: MetricReport,
    pub answer_entropy: f64,
}

pub fn evaluation(label: &str, policy: &ToyPolicy, dataset: &Dataset, seed: u64) -> Result<Evaluation, ExperimentError> {
    Ok(Evaluation {
        label: label.to_string(),
        report: evaluate(policy, Split::Eval, &dataset.eval, seed)?,
        answer_entropy: mean_answer_entropy(policy, &dataset.eval)?,
    })
}

#[derive(Debug, Clone)]
pub struct FullRun {
    pub dataset: Dataset,
    pub warmup_policy: ToyPolicy,
    pub warmup_report: WarmupReport,
    /// Eval-split results after warm-up, then after each schedule stage
    /// (labelled `"{index}:{stage}"`).
    pub evaluations: Vec<Evaluation>,
    pub reports: Vec<StepReport>,
    pub policy: ToyPolicy,
}

impl FullRun {
    pub fn evaluation_after(&self, stage: Stage) -> Option<&Evaluation> {
        self.evaluations.iter().rev().find(|e| e.label.ends_with(stage.as_str()))
    }
}

/// Runs warm-up and the configured schedule in memory, evaluating on the
/// eval split after warm-up and after every stage.
pub fn run_full(cfg: &RunConfig, scorer: &dyn Scorer) -> Result<FullRun, ExperimentError> {
    let dataset = build_dataset(cfg)?;
    let (warmup_policy, warmup_report) = warmup(cfg, &dataset)?;
    let mut evaluations = vec![evaluation("warmup", &warmup_policy, &dataset, cfg.seed)?];
    let mut reports = Vec::with_capacity(cfg.train.total_steps());
    let mut trainer = Trainer::new(warmup_policy.clone(), cfg.train.clone())?;
    trainer.run(
        &dataset.train,
        scorer,
        |r| {
            reports.push(r.clone());
            Ok::<_, ExperimentError>(())
        },
        |t, reason| {
            if let CheckpointReason::StageEnd(i) = reason {
                let label = format!("{i}:{}", t.config().schedule[i].stage);
                evaluations.push(evaluation(&label, t.policy(), &dataset, cfg.seed)?);
            }
            Ok(())
        },
    )?;
    Ok(FullRun {
        policy: trainer.into_policy(),
        dataset,
        warmup_policy,
        warmup_report,
        evaluations,
        reports,
    })
}
