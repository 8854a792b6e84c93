//! Policy optimization stages.
//!
//! `step_rr` is group-relative clipped policy-gradient ascent on the
//! step-wise reasoning reward; `ans_co` is supervised NLL plus a gated
//! entropy penalty on the answer head. [`Trainer`] runs a schedule of such
//! stages and can be checkpointed and resumed between any two steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{normalize_advantages, AdvantageError};
use crate::env::{gold_choices, EnvError, TaskInstance};
use crate::policy::{
    response_kl, Choices, Demonstration, LogitGrads, Params, PolicyError, PolicyFile, SampledResponse, ToyPolicy,
    RESPONSE_POSITIONS,
};
use crate::response_format::parse_response;
use crate::reward::{total_reward, RewardBreakdown};
use crate::similarity::{Scorer, ScorerError};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("rollout group for {0} has no advantages")]
    MissingAdvantages(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    StepRr,
    AnsCo,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::StepRr => "step_rr",
            Stage::AnsCo => "ans_co",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// One importance ratio per response, from the joint log-probability.
    #[default]
    Sequence,
    /// One ratio per head; the clipped terms are averaged over heads.
    PerHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: Stage,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub arr_threshold: f64,
    pub entropy_lambda: f64,
    pub uncertainty_gate: f64,
    /// Step size of policy-gradient ascent.
    pub learning_rate: f64,
    /// Step size of confidence-optimization descent.
    pub ans_co_learning_rate: f64,
    pub schedule: Vec<StageSpec>,
    pub ratio_mode: RatioMode,
    /// Gradient steps per rollout batch.
    pub inner_epochs: usize,
    /// Training tasks drawn (without replacement) per step; 0 uses the
    /// whole split in order.
    pub tasks_per_step: usize,
    /// Mid-stage checkpoint period in steps; 0 checkpoints only at stage ends.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.0,
            arr_threshold: 0.8,
            entropy_lambda: 0.5,
            uncertainty_gate: 0.75,
            learning_rate: 1.0,
            ans_co_learning_rate: 0.2,
            schedule: vec![
                StageSpec { stage: Stage::StepRr, steps: 200 },
                StageSpec { stage: Stage::AnsCo, steps: 50 },
            ],
            ratio_mode: RatioMode::Sequence,
            inner_epochs: 1,
            tasks_per_step: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon must be in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.arr_threshold > 0.0 && self.arr_threshold < 1.0) {
            return bad(format!("arr_threshold must be in (0, 1), got {}", self.arr_threshold));
        }
        if !(self.entropy_lambda >= 0.0) || !(self.kl_beta >= 0.0) {
            return bad("entropy_lambda and kl_beta must be >= 0".into());
        }
        if !(self.uncertainty_gate > 0.0 && self.uncertainty_gate <= 1.0) {
            return bad(format!("uncertainty_gate must be in (0, 1], got {}", self.uncertainty_gate));
        }
        for (name, lr) in [("learning_rate", self.learning_rate), ("ans_co_learning_rate", self.ans_co_learning_rate)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be >= 1".into());
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.iter().map(|s| s.steps).sum()
    }
}

/// One metrics record. Reward fields are `None` for confidence steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub stage: Stage,
    pub step: usize,
    pub r_format_mean: Option<f64>,
    pub r_arr_mean: Option<f64>,
    pub r_avc_mean: Option<f64>,
    pub r_total_mean: Option<f64>,
    pub clip_frac: f64,
    pub ans_entropy: f64,
    pub u_mean: f64,
    pub grad_norm: f64,
    pub objective: f64,
    #[serde(skip)]
    pub adv_abs_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub task_id: String,
    pub features: Vec<f64>,
    pub responses: Vec<SampledResponse>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Option<Vec<f64>>,
}

/// Scores fixed responses for a task and fills group advantages. The
/// recorded log-probabilities are those of `policy`.
pub fn score_responses(
    policy: &ToyPolicy,
    task: &TaskInstance,
    choices: Vec<Choices>,
    cfg: &TrainConfig,
    scorer: &dyn Scorer,
) -> Result<RolloutGroup, OptimError> {
    let fwd = policy.forward(&task.features)?;
    let mut responses = Vec::with_capacity(choices.len());
    let mut rewards = Vec::with_capacity(choices.len());
    for c in choices {
        policy.check_choices(&c)?;
        let text = policy.render(&c);
        let parsed = parse_response(&text);
        rewards.push(total_reward(
            &parsed,
            &task.reference_reasoning,
            &task.ground_truth,
            cfg.arr_threshold,
            scorer,
        )?);
        let head_log_probs = fwd.head_log_probs(&c);
        responses.push(SampledResponse {
            response_text: text,
            choices: c,
            log_prob: head_log_probs.iter().sum(),
            head_log_probs,
            answer_distribution: fwd.answer.probs.clone(),
        });
    }
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    Ok(RolloutGroup {
        task_id: task.id.clone(),
        features: task.features.clone(),
        responses,
        advantages: Some(normalize_advantages(&totals)?),
        rewards,
    })
}

/// Samples `cfg.group_size` responses and scores them.
pub fn rollout_group<R: Rng + ?Sized>(
    policy: &ToyPolicy,
    task: &TaskInstance,
    cfg: &TrainConfig,
    scorer: &dyn Scorer,
    rng: &mut R,
) -> Result<RolloutGroup, OptimError> {
    let choices = (0..cfg.group_size)
        .map(|_| Ok(policy.sample(&task.features, rng)?.choices))
        .collect::<Result<Vec<_>, OptimError>>()?;
    score_responses(policy, task, choices, cfg, scorer)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub objective: f64,
    pub grad: Params,
    /// Fraction of ratios outside `[1 - ε, 1 + ε]`.
    pub clip_frac: f64,
    pub kl: f64,
}

fn clipped_term(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    // Ties go to the unclipped branch, which carries the gradient.
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// Mean clipped surrogate over the group and its gradient. With
/// `kl_beta > 0` the exact KL to `snapshot` at the group's features is
/// subtracted; the snapshot is ignored otherwise.
pub fn clipped_surrogate(
    policy: &ToyPolicy,
    group: &RolloutGroup,
    cfg: &TrainConfig,
    snapshot: Option<&ToyPolicy>,
) -> Result<SurrogateEval, OptimError> {
    let adv = group
        .advantages
        .as_ref()
        .ok_or_else(|| OptimError::MissingAdvantages(group.task_id.clone()))?;
    if group.responses.is_empty() {
        return Err(OptimError::EmptyBatch);
    }
    let eps = cfg.clip_epsilon;
    let n = group.responses.len() as f64;
    let fwd = policy.forward(&group.features)?;
    let mut logit_grads = LogitGrads::zeros(policy.shape());
    let (mut objective, mut clipped, mut ratios) = (0.0, 0usize, 0usize);

    for (resp, &a) in group.responses.iter().zip(adv) {
        let new = fwd.head_log_probs(&resp.choices);
        let weights = match cfg.ratio_mode {
            RatioMode::Sequence => {
                let r = (new.iter().sum::<f64>() - resp.log_prob).exp();
                let (term, active) = clipped_term(r, a, eps);
                objective += term / n;
                ratios += 1;
                clipped += (r < 1.0 - eps || r > 1.0 + eps) as usize;
                [if active { a * r / n } else { 0.0 }; 4]
            }
            RatioMode::PerHead => {
                let h = RESPONSE_POSITIONS as f64;
                let mut w = [0.0; 4];
                for k in 0..4 {
                    let r = (new[k] - resp.head_log_probs[k]).exp();
                    let (term, active) = clipped_term(r, a, eps);
                    objective += term / (n * h);
                    ratios += 1;
                    clipped += (r < 1.0 - eps || r > 1.0 + eps) as usize;
                    if active {
                        w[k] = a * r / (n * h);
                    }
                }
                w
            }
        };
        if weights.iter().any(|&w| w != 0.0) {
            logit_grads.add_scaled(1.0, &LogitGrads::log_prob(&fwd, &resp.choices, weights));
        }
    }

    let mut kl = 0.0;
    if cfg.kl_beta > 0.0 {
        let snap = snapshot.ok_or_else(|| OptimError::InvalidConfig("kl_beta > 0 needs a snapshot policy".into()))?;
        let (k, g) = response_kl(&fwd, &snap.forward(&group.features)?);
        kl = k;
        objective -= cfg.kl_beta * k;
        logit_grads.add_scaled(-cfg.kl_beta, &g);
    }

    let mut grad = policy.zero_grad();
    policy.backward(&group.features, &fwd, &logit_grads, 1.0, &mut grad);
    Ok(SurrogateEval {
        objective,
        grad,
        clip_frac: clipped as f64 / ratios as f64,
        kl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub u: f64,
    pub entropies: Vec<f64>,
}

fn normalized_entropy(h: f64, vocab: usize) -> f64 {
    if vocab < 2 {
        0.0
    } else {
        (h / (vocab as f64).ln()).clamp(0.0, 1.0)
    }
}

/// Normalized answer entropy `H / ln |answer vocab|`. The toy policy has a
/// single answer position.
pub fn uncertainty(policy: &ToyPolicy, features: &[f64]) -> Result<UncertaintyReport, OptimError> {
    let h = policy.answer_entropy(features)?;
    Ok(UncertaintyReport {
        u: normalized_entropy(h, policy.shape().answer),
        entropies: vec![h],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnsCoEval {
    pub loss: f64,
    pub grad: Params,
    /// Each example's contribution before averaging.
    pub per_example: Vec<f64>,
    pub entropy_mean: f64,
    pub u_mean: f64,
    /// Fraction of examples whose entropy weight was gated to zero.
    pub gated_frac: f64,
}

/// `mean_i [NLL_i + λ_i H_i]` where `NLL_i` is the per-position NLL of the
/// target choices, `H_i` the answer-head entropy, and `λ_i` is `λ` unless
/// the example's uncertainty exceeds the gate, then 0. The gate itself is
/// not differentiated.
pub fn ans_co_loss(policy: &ToyPolicy, batch: &[Demonstration], cfg: &TrainConfig) -> Result<AnsCoEval, OptimError> {
    if batch.is_empty() {
        return Err(OptimError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let w = 1.0 / RESPONSE_POSITIONS as f64;
    let mut grad = policy.zero_grad();
    let mut per_example = Vec::with_capacity(batch.len());
    let (mut h_sum, mut u_sum, mut gated) = (0.0, 0.0, 0usize);
    for d in batch {
        policy.check_choices(&d.choices)?;
        let fwd = policy.forward(&d.features)?;
        let nll = -w * fwd.head_log_probs(&d.choices).iter().sum::<f64>();
        let h = fwd.answer.entropy();
        let u = normalized_entropy(h, policy.shape().answer);
        let lambda = if u > cfg.uncertainty_gate {
            gated += 1;
            0.0
        } else {
            cfg.entropy_lambda
        };
        per_example.push(nll + lambda * h);
        h_sum += h;
        u_sum += u;
        let mut g = LogitGrads::log_prob(&fwd, &d.choices, [-w; 4]);
        if lambda > 0.0 {
            g.add_scaled(1.0, &LogitGrads::answer_entropy(&fwd, lambda));
        }
        policy.backward(&d.features, &fwd, &g, 1.0 / n, &mut grad);
    }
    Ok(AnsCoEval {
        loss: per_example.iter().sum::<f64>() / n,
        grad,
        per_example,
        entropy_mean: h_sum / n,
        u_mean: u_sum / n,
        gated_frac: gated as f64 / n,
    })
}

fn mean_by(groups: &[RolloutGroup], f: impl Fn(&RewardBreakdown) -> f64) -> f64 {
    let (sum, count) = groups
        .iter()
        .flat_map(|g| &g.rewards)
        .fold((0.0, 0usize), |(s, c), r| (s + f(r), c + 1));
    sum / count as f64
}

fn answer_stats(policy: &ToyPolicy, features: &[&[f64]]) -> Result<(f64, f64), OptimError> {
    let mut h = 0.0;
    let mut u = 0.0;
    for f in features {
        let rep = uncertainty(policy, f)?;
        h += rep.entropies[0];
        u += rep.u;
    }
    let n = features.len() as f64;
    Ok((h / n, u / n))
}

/// Gradient ascent on the mean clipped surrogate of `groups`,
/// `cfg.inner_epochs` times. The report's rewards describe the rollouts;
/// objective, clip fraction and gradient norm come from the last epoch.
pub fn step_rr_update(
    policy: &mut ToyPolicy,
    groups: &[RolloutGroup],
    cfg: &TrainConfig,
    snapshot: Option<&ToyPolicy>,
) -> Result<StepReport, OptimError> {
    if groups.is_empty() {
        return Err(OptimError::EmptyBatch);
    }
    let feats: Vec<&[f64]> = groups.iter().map(|g| g.features.as_slice()).collect();
    let (ans_entropy, u_mean) = answer_stats(policy, &feats)?;
    let n = groups.len() as f64;
    let (mut objective, mut clip_frac, mut grad_norm) = (0.0, 0.0, 0.0);
    for _ in 0..cfg.inner_epochs {
        let evals = groups
            .par_iter()
            .map(|g| clipped_surrogate(policy, g, cfg, snapshot))
            .collect::<Result<Vec<_>, _>>()?;
        let mut grad = policy.zero_grad();
        objective = 0.0;
        clip_frac = 0.0;
        for e in &evals {
            grad.axpy(1.0 / n, &e.grad);
            objective += e.objective / n;
            clip_frac += e.clip_frac / n;
        }
        grad_norm = grad.norm();
        policy.params_mut().axpy(cfg.learning_rate, &grad);
    }
    let adv_abs_mean = {
        let all: Vec<f64> = groups.iter().flat_map(|g| g.advantages.iter().flatten().map(|a| a.abs())).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    };
    Ok(StepReport {
        stage: Stage::StepRr,
        step: 0,
        r_format_mean: Some(mean_by(groups, |r| r.r_format)),
        r_arr_mean: Some(mean_by(groups, |r| r.r_arr)),
        r_avc_mean: Some(mean_by(groups, |r| r.r_avc)),
        r_total_mean: Some(mean_by(groups, |r| r.total)),
        clip_frac,
        ans_entropy,
        u_mean,
        grad_norm,
        objective,
        adv_abs_mean,
    })
}

/// One descent step on [`ans_co_loss`].
pub fn ans_co_update(policy: &mut ToyPolicy, batch: &[Demonstration], cfg: &TrainConfig) -> Result<StepReport, OptimError> {
    let eval = ans_co_loss(policy, batch, cfg)?;
    policy.params_mut().axpy(-cfg.ans_co_learning_rate, &eval.grad);
    Ok(StepReport {
        stage: Stage::AnsCo,
        step: 0,
        r_format_mean: None,
        r_arr_mean: None,
        r_avc_mean: None,
        r_total_mean: None,
        clip_frac: 0.0,
        ans_entropy: eval.entropy_mean,
        u_mean: eval.u_mean,
        grad_norm: eval.grad.norm(),
        objective: eval.loss,
        adv_abs_mean: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub stage_index: usize,
    pub step_in_stage: usize,
    pub global_step: usize,
}

/// Exact position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// Word position as a decimal string; it does not fit in a JSON number.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, OptimError> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| OptimError::Checkpoint(format!("rng seed has {} bytes, expected 32", self.seed.len())))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| OptimError::Checkpoint(format!("rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to continue a schedule bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub progress: Progress,
    pub rng: RngState,
    pub policy: PolicyFile,
    /// Policy at the start of the current stage.
    pub snapshot: PolicyFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointReason {
    StageEnd(usize),
    Periodic,
}

/// Runs a stage schedule over a fixed training split.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    policy: ToyPolicy,
    snapshot: ToyPolicy,
    rng: ChaCha8Rng,
    progress: Progress,
}

impl Trainer {
    pub fn new(policy: ToyPolicy, cfg: TrainConfig) -> Result<Self, OptimError> {
        cfg.validate()?;
        let mut trainer = Self {
            snapshot: policy.clone(),
            policy,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            progress: Progress::default(),
            cfg,
        };
        trainer.skip_empty_stages();
        Ok(trainer)
    }

    pub fn from_state(state: TrainerState) -> Result<Self, OptimError> {
        state.config.validate()?;
        Ok(Self {
            policy: ToyPolicy::try_from(state.policy)?,
            snapshot: ToyPolicy::try_from(state.snapshot)?,
            rng: state.rng.restore()?,
            progress: state.progress,
            cfg: state.config,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            config: self.cfg.clone(),
            progress: self.progress,
            rng: RngState::capture(&self.rng),
            policy: PolicyFile::from(&self.policy),
            snapshot: PolicyFile::from(&self.snapshot),
        }
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> ToyPolicy {
        self.policy
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn is_finished(&self) -> bool {
        self.progress.stage_index >= self.cfg.schedule.len()
    }

    fn skip_empty_stages(&mut self) {
        while self
            .cfg
            .schedule
            .get(self.progress.stage_index)
            .is_some_and(|s| self.progress.step_in_stage >= s.steps)
        {
            self.progress.stage_index += 1;
            self.progress.step_in_stage = 0;
            self.snapshot = self.policy.clone();
        }
    }

    fn batch_indices(&mut self, n: usize) -> Vec<usize> {
        let k = self.cfg.tasks_per_step;
        if k == 0 || k >= n {
            (0..n).collect()
        } else {
            let mut idx = rand::seq::index::sample(&mut self.rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
    }

    /// Executes one step. Returns `None` once the schedule is done.
    pub fn step(&mut self, train: &[TaskInstance], scorer: &dyn Scorer) -> Result<Option<StepReport>, OptimError> {
        let Some(spec) = self.cfg.schedule.get(self.progress.stage_index).copied() else {
            return Ok(None);
        };
        if train.is_empty() {
            return Err(OptimError::EmptyBatch);
        }
        let idx = self.batch_indices(train.len());
        let mut report = match spec.stage {
            Stage::StepRr => {
                // Per-task seeds are drawn up front so parallel rollouts stay
                // deterministic.
                let seeds: Vec<u64> = idx.iter().map(|_| self.rng.random()).collect();
                let policy = &self.policy;
                let cfg = &self.cfg;
                let groups = idx
                    .par_iter()
                    .zip(seeds)
                    .map(|(&i, s)| rollout_group(policy, &train[i], cfg, scorer, &mut ChaCha8Rng::seed_from_u64(s)))
                    .collect::<Result<Vec<_>, _>>()?;
                step_rr_update(&mut self.policy, &groups, &self.cfg, Some(&self.snapshot))?
            }
            Stage::AnsCo => {
                let batch = idx
                    .iter()
                    .map(|&i| {
                        Ok(Demonstration {
                            features: train[i].features.clone(),
                            choices: gold_choices(self.policy.vocab(), &train[i])?,
                        })
                    })
                    .collect::<Result<Vec<_>, OptimError>>()?;
                ans_co_update(&mut self.policy, &batch, &self.cfg)?
            }
        };
        self.progress.global_step += 1;
        self.progress.step_in_stage += 1;
        report.step = self.progress.global_step;
        self.skip_empty_stages();
        Ok(Some(report))
    }

    /// Runs to the end of the schedule. `on_report` sees every report;
    /// `on_checkpoint` is called after each finished stage and every
    /// `checkpoint_every` steps.
    pub fn run<E>(
        &mut self,
        train: &[TaskInstance],
        scorer: &dyn Scorer,
        mut on_report: impl FnMut(&StepReport) -> Result<(), E>,
        mut on_checkpoint: impl FnMut(&Trainer, CheckpointReason) -> Result<(), E>,
    ) -> Result<(), E>
    where
        E: From<OptimError>,
    {
        while !self.is_finished() {
            let stage_before = self.progress.stage_index;
            let Some(report) = self.step(train, scorer)? else { break };
            on_report(&report)?;
            if self.progress.stage_index != stage_before {
                on_checkpoint(self, CheckpointReason::StageEnd(stage_before))?;
            } else if self.cfg.checkpoint_every > 0 && self.progress.global_step.is_multiple_of(self.cfg.checkpoint_every) {
                on_checkpoint(self, CheckpointReason::Periodic)?;
            }
        }
        Ok(())
    }
}

/// Runs the whole schedule and returns the trained policy and all reports.
pub fn run_schedule(
    policy: ToyPolicy,
    train: &[TaskInstance],
    cfg: &TrainConfig,
    scorer: &dyn Scorer,
) -> Result<(ToyPolicy, Vec<StepReport>), OptimError> {
    let mut trainer = Trainer::new(policy, cfg.clone())?;
    let mut reports = Vec::with_capacity(cfg.total_steps());
    trainer.run(
        train,
        scorer,
        |r| {
            reports.push(r.clone());
            Ok::<_, OptimError>(())
        },
        |_, _| Ok(()),
    )?;
    Ok((trainer.into_policy(), reports))
}
