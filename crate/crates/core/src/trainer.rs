//! Clipped policy-gradient training with hindsight replay, plus the two no-replay baselines.
//!
//! One step samples `m` rollouts per instruction from a frozen snapshot of the current policy,
//! optionally builds `k` replay entries per group, normalizes rewards into advantages over the
//! whole step batch and applies a single gradient-ascent update on
//!
//! ```text
//! (1/m) Σ_initial  tokenmean min(ρ A,  clip(ρ, 1±ε) A)
//! + (1/k) Σ_replay tokenmean min(ρ' A', clip(ρ', 1±ε) A')  −  β · KL(π_θ ‖ π_ref)
//! ```
//!
//! averaged over the instructions of the step. `ρ'` evaluates the current policy under the
//! rewritten instruction but divides by the log-probability stored at generation time under
//! the original one.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{cla_from_mask, ila_from_mask, Judge, Token};
use crate::error::{HirError, Result};
use crate::instructions::InstructionDataset;
use crate::policy::Policy;
use crate::replay::{
    fill_with_successes, select_rewrite, CurriculumState, FillKind, ReplayTuple, SamplingGroup,
    ScoredRollout,
};
use crate::scalar::Scalar;

const ROLLOUT_SALT: u64 = 0x5eed_0f_0ff_1ce;

/// Importance ratios are clamped to this range before use.
pub const RATIO_FLOOR: f64 = 1e-8;
pub const RATIO_CEIL: f64 = 1e8;

const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "hir")]
    Hir,
    #[serde(rename = "rl-ir")]
    RlIr,
    #[serde(rename = "rl-cr")]
    RlCr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Hir, Algorithm::RlIr, Algorithm::RlCr];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Hir => "hir",
            Algorithm::RlIr => "rl-ir",
            Algorithm::RlCr => "rl-cr",
        }
    }

    /// Scalar reward of an initial sample.
    pub fn reward(&self, mask: &[bool]) -> Result<f64> {
        match self {
            Algorithm::Hir | Algorithm::RlIr => Ok(if ila_from_mask(mask) { 1.0 } else { 0.0 }),
            Algorithm::RlCr => cla_from_mask(mask),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = HirError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hir" => Ok(Algorithm::Hir),
            "rl-ir" => Ok(Algorithm::RlIr),
            "rl-cr" => Ok(Algorithm::RlCr),
            other => Err(HirError::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Which rewards share one mean/std statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantagePooling {
    /// Initial and replayed samples of the whole step together.
    Combined,
    /// Initial and replayed samples normalized separately.
    PerOrigin,
}

/// How the per-token penalty towards the reference policy is estimated from sampled tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlEstimator {
    /// `log π_θ − log π_ref`. Unbiased in value, but as a loss on sampled tokens its expected
    /// gradient is zero, so it does not pull the policy back towards the reference.
    LogRatio,
    /// `r − log r − 1` with `r = π_ref/π_θ`: nonnegative, and its gradient is that of the
    /// reverse KL.
    LowVariance,
}

impl KlEstimator {
    /// Penalty value and its derivative with respect to `log π_θ`, given `log π_θ − log π_ref`.
    fn eval<T: Scalar>(self, log_ratio: T) -> (T, T) {
        match self {
            KlEstimator::LogRatio => (log_ratio, T::one()),
            KlEstimator::LowVariance => {
                let r = (-log_ratio).exp();
                (r + log_ratio - T::one(), T::one() - r)
            }
        }
    }
}

/// Coefficient and estimator of the KL penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlPenalty {
    pub coef: f64,
    pub estimator: KlEstimator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub m: usize,
    pub k: usize,
    pub eta: f64,
    pub lambda0: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub kl_coef: f64,
    pub kl_estimator: KlEstimator,
    pub max_response_len: usize,
    /// Instructions per step.
    pub batch_size: usize,
    /// Extra rollouts allowed per group when it has fewer than `k` failures.
    pub supplementary_budget: usize,
    pub steps: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub pooling: AdvantagePooling,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            m: 6,
            k: 2,
            eta: 0.05,
            lambda0: 2.0,
            clip: 0.2,
            learning_rate: 0.5,
            kl_coef: 1e-4,
            kl_estimator: KlEstimator::LowVariance,
            max_response_len: 8,
            batch_size: 8,
            supplementary_budget: 6,
            steps: 200,
            seed: 0,
            algorithm: Algorithm::Hir,
            pooling: AdvantagePooling::Combined,
        }
    }
}

impl TrainerConfig {
    pub fn kl_penalty(&self) -> KlPenalty {
        KlPenalty {
            coef: self.kl_coef,
            estimator: self.kl_estimator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HirError::Config(m));
        if !(0 < self.k && self.k < self.m) {
            return bad(format!("need 0 < k < m (k = {}, m = {})", self.k, self.m));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip ε must lie in (0, 1), got {}", self.clip));
        }
        if !(self.kl_coef >= 0.0) {
            return bad(format!(
                "KL coefficient must be nonnegative, got {}",
                self.kl_coef
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_response_len == 0 {
            return bad("batch size and max response length must be positive".into());
        }
        CurriculumState::new(self.lambda0, self.eta)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Initial,
    Replayed(FillKind),
}

/// One training sample of a step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub group: usize,
    /// Rendering the numerator is evaluated under: `q` for initial samples and supplementary
    /// successes, `q'` for rewritten failures.
    pub context: Vec<Token>,
    pub tokens: Vec<Token>,
    /// Generation-time log-probabilities, always under the original instruction.
    pub old_logprobs: Vec<T>,
    /// Reference-policy log-probabilities under `context`.
    pub ref_logprobs: Vec<T>,
    pub reward: f64,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceBuffer<T> {
    pub samples: Vec<Sample<T>>,
    pub groups: usize,
    pub m: usize,
    pub k: usize,
}

impl<T: Scalar> ExperienceBuffer<T> {
    /// Per-sample weight in the objective: `1/groups` times `1/m` or `1/k`.
    pub fn coefficient(&self, origin: Origin) -> f64 {
        let per_group = match origin {
            Origin::Initial => 1.0 / self.m as f64,
            Origin::Replayed(_) => 1.0 / self.k as f64,
        };
        per_group / self.groups as f64
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward).collect()
    }

    pub fn origins(&self) -> Vec<Origin> {
        self.samples.iter().map(|s| s.origin).collect()
    }

    pub fn replayed(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| matches!(s.origin, Origin::Replayed(_)))
            .count()
    }
}

/// Instruction-level reward; identical to the instruction-level accuracy.
pub fn compute_reward(
    q: &crate::instructions::Instruction,
    y: &[Token],
    judge: &dyn Judge,
) -> Result<f64> {
    let ok = crate::constraints::instruction_level_accuracy(q, y, q.constraints(), judge)?;
    Ok(if ok { 1.0 } else { 0.0 })
}

fn normalize(rewards: &[f64]) -> Option<Vec<f64>> {
    if rewards.len() < 2 || rewards.iter().all(|&r| r == rewards[0]) {
        return None;
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Some(
        rewards
            .iter()
            .map(|r| (r - mean) / (std + ADVANTAGE_EPS))
            .collect(),
    )
}

/// `A_i = (r_i − mean) / (std + 1e−8)` over the pool the sample belongs to (population std).
/// A pool without variance contributes zero advantages; the batch is degenerate when every
/// pool lacks variance.
pub fn compute_advantages(
    rewards: &[f64],
    origins: &[Origin],
    pooling: AdvantagePooling,
) -> Result<Vec<f64>> {
    assert_eq!(rewards.len(), origins.len());
    match pooling {
        AdvantagePooling::Combined => normalize(rewards).ok_or(HirError::DegenerateBatch),
        AdvantagePooling::PerOrigin => {
            let mut out = vec![0.0; rewards.len()];
            let mut informative = false;
            for replayed in [false, true] {
                let idx: Vec<usize> = (0..rewards.len())
                    .filter(|&i| matches!(origins[i], Origin::Replayed(_)) == replayed)
                    .collect();
                let pool: Vec<f64> = idx.iter().map(|&i| rewards[i]).collect();
                if let Some(adv) = normalize(&pool) {
                    informative = true;
                    for (&i, a) in idx.iter().zip(adv) {
                        out[i] = a;
                    }
                }
            }
            if informative {
                Ok(out)
            } else {
                Err(HirError::DegenerateBatch)
            }
        }
    }
}

fn clamp_ratio<T: Scalar>(log_ratio: T) -> (T, bool) {
    let r = log_ratio.exp();
    let (lo, hi) = (T::lit(RATIO_FLOOR), T::lit(RATIO_CEIL));
    if r < lo {
        (lo, true)
    } else if r > hi {
        (hi, true)
    } else {
        (r, false)
    }
}

/// Per-token `ρ_t = π_θ(y_t | context_now, y_<t) / exp(old_logprob_t)`, clamped; also returns
/// how many tokens hit the clamp.
pub fn importance_ratios<T: Scalar>(
    policy: &Policy<T>,
    old_logprobs: &[T],
    context_now: &[Token],
    y: &[Token],
) -> Result<(Vec<T>, usize)> {
    if old_logprobs.len() != y.len() {
        return Err(HirError::Invariant(format!(
            "{} stored log-probabilities for {} tokens",
            old_logprobs.len(),
            y.len()
        )));
    }
    let now = policy.logprob_sequence(context_now, y)?;
    let mut hits = 0;
    let ratios = now
        .iter()
        .zip(old_logprobs)
        .map(|(&n, &o)| {
            let (r, hit) = clamp_ratio(n - o);
            hits += hit as usize;
            r
        })
        .collect();
    Ok((ratios, hits))
}

#[derive(Clone, Debug)]
pub struct SurrogateReport<T> {
    pub value: T,
    pub grad: Vec<T>,
    /// Share of initial-sample tokens whose clipped branch is active.
    pub clip_frac_initial: f64,
    /// Same for replayed tokens.
    pub clip_frac_replayed: f64,
    /// Mean per-token KL penalty estimate.
    pub kl: f64,
    pub clamp_hits: usize,
}

struct SampleTerms<T> {
    value: T,
    grad: Vec<T>,
    clipped: usize,
    kl_sum: f64,
    clamps: usize,
}

/// Value and exact gradient of the clipped surrogate minus the KL penalty, for given per-sample
/// advantages (broadcast to every token). Tokens on the clipped branch contribute no gradient.
pub fn surrogate_objective_and_grad<T: Scalar>(
    buffer: &ExperienceBuffer<T>,
    policy: &Policy<T>,
    advantages: &[T],
    clip: f64,
    kl: KlPenalty,
) -> Result<SurrogateReport<T>> {
    assert_eq!(
        advantages.len(),
        buffer.samples.len(),
        "one advantage per sample"
    );
    let lo = T::lit(1.0 - clip);
    let hi = T::lit(1.0 + clip);
    let beta = T::lit(kl.coef);
    let n_params = policy.params().len();

    let terms: Vec<SampleTerms<T>> = buffer
        .samples
        .par_iter()
        .zip(advantages.par_iter())
        .map(|(sample, &adv)| -> Result<SampleTerms<T>> {
            if sample.old_logprobs.len() != sample.tokens.len()
                || sample.ref_logprobs.len() != sample.tokens.len()
            {
                return Err(HirError::Invariant(
                    "log-probability length mismatch".into(),
                ));
            }
            let scale =
                T::lit(buffer.coefficient(sample.origin)) / T::of_usize(sample.tokens.len());
            let mut grad = vec![T::zero(); n_params];
            let mut value = T::zero();
            let mut clipped = 0;
            let mut kl_sum = 0.0;
            let mut clamps = 0;
            policy.accumulate_weighted(
                &sample.context,
                &sample.tokens,
                |now| {
                    now.iter()
                        .enumerate()
                        .map(|(t, &lp)| {
                            let (rho, hit) = clamp_ratio(lp - sample.old_logprobs[t]);
                            clamps += hit as usize;
                            let unclipped = rho * adv;
                            let bounded = rho.max(lo).min(hi) * adv;
                            let (penalty, d_penalty) =
                                kl.estimator.eval(lp - sample.ref_logprobs[t]);
                            kl_sum += penalty.as_f64();
                            value += scale * (unclipped.min(bounded) - beta * penalty);
                            let mut w = -beta * d_penalty * scale;
                            if unclipped <= bounded {
                                if !hit {
                                    w += scale * unclipped;
                                }
                            } else {
                                clipped += 1;
                            }
                            w
                        })
                        .collect()
                },
                &mut grad,
            )?;
            Ok(SampleTerms {
                value,
                grad,
                clipped,
                kl_sum,
                clamps,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grad = vec![T::zero(); n_params];
    let mut value = T::zero();
    let (mut clip_i, mut tok_i, mut clip_r, mut tok_r) = (0usize, 0usize, 0usize, 0usize);
    let mut kl_total = 0.0;
    let mut tokens = 0usize;
    let mut clamp_hits = 0;
    for (term, sample) in terms.iter().zip(&buffer.samples) {
        value += term.value;
        for (g, &d) in grad.iter_mut().zip(&term.grad) {
            *g += d;
        }
        match sample.origin {
            Origin::Initial => {
                clip_i += term.clipped;
                tok_i += sample.tokens.len();
            }
            Origin::Replayed(_) => {
                clip_r += term.clipped;
                tok_r += sample.tokens.len();
            }
        }
        kl_total += term.kl_sum;
        tokens += sample.tokens.len();
        clamp_hits += term.clamps;
    }
    let frac = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(SurrogateReport {
        value,
        grad,
        clip_frac_initial: frac(clip_i, tok_i),
        clip_frac_replayed: frac(clip_r, tok_r),
        kl: if tokens == 0 {
            0.0
        } else {
            kl_total / tokens as f64
        },
        clamp_hits,
    })
}

fn advantages_for<T: Scalar>(
    buffer: &ExperienceBuffer<T>,
    pooling: AdvantagePooling,
) -> Result<Vec<T>> {
    Ok(
        compute_advantages(&buffer.rewards(), &buffer.origins(), pooling)?
            .into_iter()
            .map(T::lit)
            .collect(),
    )
}

/// The full objective over initial and replayed samples, advantages normalized per `config`.
pub fn hir_objective_and_grad<T: Scalar>(
    buffer: &ExperienceBuffer<T>,
    policy: &Policy<T>,
    config: &TrainerConfig,
) -> Result<SurrogateReport<T>> {
    let adv = advantages_for(buffer, config.pooling)?;
    surrogate_objective_and_grad(buffer, policy, &adv, config.clip, config.kl_penalty())
}

fn baseline_objective<T: Scalar>(
    buffer: &ExperienceBuffer<T>,
    policy: &Policy<T>,
    config: &TrainerConfig,
    binary: bool,
) -> Result<SurrogateReport<T>> {
    if buffer.replayed() > 0 {
        return Err(HirError::Invariant(
            "baseline buffers carry no replayed samples".into(),
        ));
    }
    if binary
        && buffer
            .samples
            .iter()
            .any(|s| s.reward != 0.0 && s.reward != 1.0)
    {
        return Err(HirError::Invariant(
            "instruction-level rewards are binary".into(),
        ));
    }
    hir_objective_and_grad(buffer, policy, config)
}

/// Baseline with instruction-level rewards and no replay.
pub fn rl_ir_objective<T: Scalar>(
    buffer: &ExperienceBuffer<T>,
    policy: &Policy<T>,
    config: &TrainerConfig,
) -> Result<SurrogateReport<T>> {
    baseline_objective(buffer, policy, config, true)
}

/// Baseline with constraint-level rewards and no replay.
pub fn rl_cr_objective<T: Scalar>(
    buffer: &ExperienceBuffer<T>,
    policy: &Policy<T>,
    config: &TrainerConfig,
) -> Result<SurrogateReport<T>> {
    baseline_objective(buffer, policy, config, false)
}

/// Draws extra rollouts from the old policy until the group (plus the extras) holds `k`
/// failures or `budget` draws are spent.
pub fn supplementary_sampling<T: Scalar>(
    old: &Policy<T>,
    group: &SamplingGroup<T>,
    k: usize,
    budget: usize,
    max_len: usize,
    judge: &dyn Judge,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ScoredRollout<T>>> {
    let mut failures = group.failures();
    let mut extra = Vec::new();
    while failures < k && extra.len() < budget {
        let r = old.sample_response(group.instruction.rendered(), rng, max_len, 1.0);
        let scored = ScoredRollout::evaluate(&group.instruction, r, judge)?;
        if !scored.success() {
            failures += 1;
        }
        extra.push(scored);
    }
    Ok(extra)
}

/// Exactly `k` replay entries for one group: selected failures first (topping up the pool with
/// supplementary draws when needed), then successes replayed under the full instruction.
pub fn build_replays<T: Scalar>(
    old: &Policy<T>,
    group: &SamplingGroup<T>,
    config: &TrainerConfig,
    lambda: T,
    judge: &dyn Judge,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<ReplayTuple<T>>, usize)> {
    let extra = supplementary_sampling(
        old,
        group,
        config.k,
        config.supplementary_budget,
        config.max_response_len,
        judge,
        rng,
    )?;
    let draws = extra.len();
    let pool = if extra.is_empty() {
        group.clone()
    } else {
        let mut g = group.clone();
        g.rollouts.extend(extra);
        g
    };
    let mut tuples = select_rewrite(&pool, config.k, lambda, judge)?;
    let missing = config.k - tuples.len();
    tuples.extend(fill_with_successes(&pool, missing, lambda)?);
    Ok((tuples, draws))
}

/// Assembles one step's samples: every group's `m` initial rollouts under `q` with the
/// algorithm's reward, followed by its replay entries under their own instructions with reward
/// 1. Reference log-probabilities are taken under each sample's context.
pub fn build_buffer<T: Scalar>(
    parts: &[(&SamplingGroup<T>, &[ReplayTuple<T>])],
    config: &TrainerConfig,
    reference: &Policy<T>,
    judge: &dyn Judge,
) -> Result<ExperienceBuffer<T>> {
    let mut pending: Vec<(usize, Vec<Token>, Vec<Token>, Vec<T>, f64, Origin)> = Vec::new();
    for (group, tuples) in parts {
        if group.rollouts.len() != config.m {
            return Err(HirError::Invariant(format!(
                "group {} holds {} rollouts, expected {}",
                group.id,
                group.rollouts.len(),
                config.m
            )));
        }
        for r in &group.rollouts {
            pending.push((
                group.id,
                group.instruction.rendered().to_vec(),
                r.rollout.tokens.clone(),
                r.rollout.logprobs.clone(),
                config.algorithm.reward(&r.mask)?,
                Origin::Initial,
            ));
        }
        for t in tuples.iter() {
            let reward = compute_reward(&t.instruction, &t.tokens, judge)?;
            if reward != 1.0 {
                return Err(HirError::Invariant(format!(
                    "replay of group {} rollout {} scored {reward} under its own instruction",
                    t.group, t.rollout
                )));
            }
            pending.push((
                group.id,
                t.instruction.rendered().to_vec(),
                t.tokens.clone(),
                t.old_logprobs.clone(),
                reward,
                Origin::Replayed(t.fill),
            ));
        }
    }
    let samples = pending
        .into_par_iter()
        .map(|(group, context, tokens, old_logprobs, reward, origin)| {
            let ref_logprobs = reference.logprob_sequence(&context, &tokens)?;
            Ok(Sample {
                group,
                context,
                tokens,
                old_logprobs,
                ref_logprobs,
                reward,
                origin,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperienceBuffer {
        samples,
        groups: parts.len(),
        m: config.m,
        k: config.k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: usize,
    pub algorithm: Algorithm,
    pub skipped: bool,
    pub mean_reward: f64,
    pub mean_ila: f64,
    pub mean_cla: f64,
    pub mean_fdiv_selected: f64,
    pub lambda: f64,
    pub clip_frac_initial: f64,
    pub clip_frac_replayed: f64,
    pub mean_response_len: f64,
    pub kl: f64,
    pub objective: f64,
    pub replays: usize,
    pub supplementary_draws: usize,
    pub supplementary_fills: usize,
    pub ratio_clamps: usize,
    pub degenerate_total: usize,
}

pub struct StepOutcome<T> {
    pub metrics: TrainMetrics,
    pub groups: Vec<SamplingGroup<T>>,
    pub replays: Vec<ReplayTuple<T>>,
}

/// Stateful training loop; one call to [`Trainer::step`] is one update.
pub struct Trainer<'a, T> {
    dataset: &'a InstructionDataset,
    config: TrainerConfig,
    judge: &'a dyn Judge,
    policy: Policy<T>,
    reference: Policy<T>,
    curriculum: CurriculumState,
    step: usize,
    degenerate: usize,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(
        dataset: &'a InstructionDataset,
        config: TrainerConfig,
        judge: &'a dyn Judge,
        policy: Policy<T>,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(HirError::Config("training dataset is empty".into()));
        }
        let curriculum = CurriculumState::new(config.lambda0, config.eta)?;
        Ok(Self {
            dataset,
            config,
            judge,
            reference: policy.clone(),
            policy,
            curriculum,
            step: 0,
            degenerate: 0,
        })
    }

    pub fn policy(&self) -> &Policy<T> {
        &self.policy
    }

    pub fn into_policy(self) -> Policy<T> {
        self.policy
    }

    pub fn reference(&self) -> &Policy<T> {
        &self.reference
    }

    pub fn degenerate_skips(&self) -> usize {
        self.degenerate
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn rollout_rng(&self, slot: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ ROLLOUT_SALT);
        rng.set_stream(slot as u64);
        rng
    }

    pub fn step(&mut self) -> Result<StepOutcome<T>> {
        let cfg = &self.config;
        let s = self.step;
        self.curriculum.advance_to(s as u64);
        let lambda = T::lit(self.curriculum.lambda);
        let old = self.policy.clone();
        let n = self.dataset.len();
        let judge = self.judge;

        let outcomes: Vec<(SamplingGroup<T>, Vec<ReplayTuple<T>>, usize)> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|i| {
                let slot = s * cfg.batch_size + i;
                let q = self.dataset.instructions[slot % n].clone();
                let mut rng = self.rollout_rng(slot);
                let rollouts = (0..cfg.m)
                    .map(|_| old.sample_response(q.rendered(), &mut rng, cfg.max_response_len, 1.0))
                    .collect();
                let group = SamplingGroup::evaluate(i, q, rollouts, judge)?;
                if cfg.algorithm == Algorithm::Hir {
                    let (tuples, draws) =
                        build_replays(&old, &group, cfg, lambda, judge, &mut rng)?;
                    Ok((group, tuples, draws))
                } else {
                    Ok((group, Vec::new(), 0))
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let (mut ila_sum, mut cla_sum, mut reward_sum, mut len_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut draws = 0;
        for (group, _, d) in &outcomes {
            draws += d;
            for r in &group.rollouts {
                ila_sum += if r.success() { 1.0 } else { 0.0 };
                cla_sum += r.integrity()?;
                reward_sum += cfg.algorithm.reward(&r.mask)?;
                len_sum += r.rollout.tokens.len() as f64;
            }
        }
        let parts: Vec<(&SamplingGroup<T>, &[ReplayTuple<T>])> =
            outcomes.iter().map(|(g, t, _)| (g, t.as_slice())).collect();
        let buffer = build_buffer(&parts, cfg, &self.reference, judge)?;

        let initial = (cfg.batch_size * cfg.m) as f64;
        let replays: Vec<ReplayTuple<T>> = outcomes
            .iter()
            .flat_map(|(_, t, _)| t.iter().cloned())
            .collect();
        let selected: Vec<f64> = replays
            .iter()
            .filter(|t| t.fill == FillKind::SelectedFailure)
            .map(|t| t.f_div.as_f64())
            .collect();
        let fills = replays.len() - selected.len();
        let mut metrics = TrainMetrics {
            step: s,
            algorithm: cfg.algorithm,
            skipped: false,
            mean_reward: reward_sum / initial,
            mean_ila: ila_sum / initial,
            mean_cla: cla_sum / initial,
            mean_fdiv_selected: if selected.is_empty() {
                0.0
            } else {
                selected.iter().sum::<f64>() / selected.len() as f64
            },
            lambda: self.curriculum.lambda,
            clip_frac_initial: 0.0,
            clip_frac_replayed: 0.0,
            mean_response_len: len_sum / initial,
            kl: 0.0,
            objective: 0.0,
            replays: replays.len(),
            supplementary_draws: draws,
            supplementary_fills: fills,
            ratio_clamps: 0,
            degenerate_total: self.degenerate,
        };

        let report = match cfg.algorithm {
            Algorithm::Hir => hir_objective_and_grad(&buffer, &old, cfg),
            Algorithm::RlIr => rl_ir_objective(&buffer, &old, cfg),
            Algorithm::RlCr => rl_cr_objective(&buffer, &old, cfg),
        };
        match report {
            Ok(report) => {
                self.policy.ascend(&report.grad, T::lit(cfg.learning_rate));
                metrics.clip_frac_initial = report.clip_frac_initial;
                metrics.clip_frac_replayed = report.clip_frac_replayed;
                metrics.kl = report.kl;
                metrics.objective = report.value.as_f64();
                metrics.ratio_clamps = report.clamp_hits;
            }
            Err(HirError::DegenerateBatch) => {
                self.degenerate += 1;
                metrics.skipped = true;
                metrics.degenerate_total = self.degenerate;
            }
            Err(e) => return Err(e),
        }
        self.step += 1;

        let groups = outcomes.into_iter().map(|(g, _, _)| g).collect();
        Ok(StepOutcome {
            metrics,
            groups,
            replays,
        })
    }
}

/// Runs `config.steps` updates from `init` and returns the trained policy with one metrics row
/// per step.
pub fn train_loop<T: Scalar>(
    dataset: &InstructionDataset,
    config: &TrainerConfig,
    judge: &dyn Judge,
    init: Policy<T>,
) -> Result<(Policy<T>, Vec<TrainMetrics>)> {
    let mut trainer = Trainer::new(dataset, config.clone(), judge, init)?;
    let mut rows = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        rows.push(trainer.step()?.metrics);
    }
    Ok((trainer.into_policy(), rows))
}
