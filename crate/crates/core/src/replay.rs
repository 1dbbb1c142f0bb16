//! Select-then-rewrite hindsight replay.
//!
//! Failed rollouts of a sampling group are scored by `F = F_div + λ·F_int`, the top `k` are
//! kept, and each one is rewritten into a pseudo-instruction that keeps only the constraints the
//! response satisfied. The rewritten tuple carries reward 1 and the log-probabilities recorded
//! when the response was generated under the original instruction.

use serde::{Deserialize, Serialize};

use crate::constraints::{
    cla_from_mask, evaluate_mask, ila_from_mask, instruction_level_accuracy, ConstraintSet, Judge,
    Token,
};
use crate::error::{HirError, Result};
use crate::instructions::{rewrite_instruction, Instruction};
use crate::policy::{response_entropy, Rollout};
use crate::scalar::Scalar;

/// Upper bound on the curriculum weight.
pub const LAMBDA_MAX: f64 = 1e6;

/// A rollout with its satisfaction mask, evaluated once and reused everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRollout<T> {
    pub rollout: Rollout<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> ScoredRollout<T> {
    pub fn evaluate(q: &Instruction, rollout: Rollout<T>, judge: &dyn Judge) -> Result<Self> {
        let mask = evaluate_mask(q, &rollout.tokens, q.constraints(), judge)?;
        Ok(Self { rollout, mask })
    }

    /// Instruction-level reward.
    pub fn success(&self) -> bool {
        ila_from_mask(&self.mask)
    }

    pub fn integrity(&self) -> Result<f64> {
        cla_from_mask(&self.mask)
    }
}

/// `m` rollouts of one instruction drawn from the same old-policy snapshot.
#[derive(Clone, Debug)]
pub struct SamplingGroup<T> {
    pub id: usize,
    pub instruction: Instruction,
    pub rollouts: Vec<ScoredRollout<T>>,
}

impl<T: Scalar> SamplingGroup<T> {
    pub fn evaluate(
        id: usize,
        instruction: Instruction,
        rollouts: Vec<Rollout<T>>,
        judge: &dyn Judge,
    ) -> Result<Self> {
        let rollouts = rollouts
            .into_iter()
            .map(|r| ScoredRollout::evaluate(&instruction, r, judge))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id,
            instruction,
            rollouts,
        })
    }

    pub fn failures(&self) -> usize {
        self.rollouts.iter().filter(|r| !r.success()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FillKind {
    SelectedFailure,
    SupplementarySuccess,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayTuple<T> {
    /// Rewritten instruction `q'` (the original one for supplementary successes).
    pub instruction: Instruction,
    pub tokens: Vec<Token>,
    /// Old-policy log-probabilities recorded at generation time under the original instruction.
    pub old_logprobs: Vec<T>,
    pub group: usize,
    pub rollout: usize,
    pub fill: FillKind,
    pub f_div: T,
    pub f_int: f64,
    pub lambda: T,
}

impl<T> ReplayTuple<T> {
    /// The satisfied subset `C'`.
    pub fn satisfied(&self) -> &ConstraintSet {
        self.instruction.constraints()
    }

    pub fn reward(&self) -> f64 {
        1.0
    }
}

/// `λ = (1+η)^s · λ₀`, tracked across steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub lambda0: f64,
    pub eta: f64,
    pub step: u64,
    pub lambda: f64,
}

impl CurriculumState {
    pub fn new(lambda0: f64, eta: f64) -> Result<Self> {
        if !(lambda0 > 0.0) || !(0.0..=1.0).contains(&eta) {
            return Err(HirError::Config(format!(
                "curriculum needs λ₀ > 0 and η in [0, 1] (got {lambda0}, {eta})"
            )));
        }
        Ok(Self {
            lambda0,
            eta,
            step: 0,
            lambda: lambda0,
        })
    }

    pub fn advance_to(&mut self, step: u64) {
        self.step = step;
        self.lambda = curriculum_weight(self.lambda0, self.eta, step);
    }
}

/// Integrity weight at step `s`, capped at [`LAMBDA_MAX`].
pub fn curriculum_weight(lambda0: f64, eta: f64, s: u64) -> f64 {
    ((1.0 + eta).powf(s as f64) * lambda0).min(LAMBDA_MAX)
}

/// Fraction of the original constraints the response satisfies.
pub fn integrity_score(
    q: &Instruction,
    y: &[Token],
    set: &ConstraintSet,
    judge: &dyn Judge,
) -> Result<f64> {
    if set.is_empty() {
        return Err(HirError::EmptyConstraintSet);
    }
    cla_from_mask(&evaluate_mask(q, y, set, judge)?)
}

/// `F = F_div + λ·F_int`.
pub fn combined_score<T: Scalar>(scored: &ScoredRollout<T>, lambda: T) -> Result<T> {
    Ok(response_entropy(&scored.rollout) + lambda * T::lit(scored.integrity()?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate<T> {
    pub index: usize,
    pub score: T,
    pub integrity: f64,
}

/// Top-`k` candidates by score, ties broken by the lower index. Candidates with zero integrity
/// are considered only when fewer than `k` others exist.
pub fn select_top_k<T: Scalar>(candidates: &[Candidate<T>], k: usize) -> Vec<usize> {
    let mut order: Vec<&Candidate<T>> = candidates.iter().collect();
    order.sort_by(|a, b| {
        (b.integrity > 0.0)
            .cmp(&(a.integrity > 0.0))
            .then(
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.index.cmp(&b.index))
    });
    order.into_iter().take(k).map(|c| c.index).collect()
}

/// Scores every failure of the group and rewrites the selected ones. Returns at most `k`
/// tuples, fewer when the group has fewer failures.
pub fn select_rewrite<T: Scalar>(
    group: &SamplingGroup<T>,
    k: usize,
    lambda: T,
    judge: &dyn Judge,
) -> Result<Vec<ReplayTuple<T>>> {
    let q = &group.instruction;
    let mut candidates = Vec::new();
    for (index, r) in group.rollouts.iter().enumerate() {
        if r.success() {
            continue;
        }
        candidates.push(Candidate {
            index,
            score: combined_score(r, lambda)?,
            integrity: r.integrity()?,
        });
    }
    let mut out = Vec::with_capacity(k.min(candidates.len()));
    for index in select_top_k(&candidates, k) {
        let r = &group.rollouts[index];
        let rewritten = rewrite_instruction(q, &r.mask)?;
        if !instruction_level_accuracy(
            &rewritten,
            &r.rollout.tokens,
            rewritten.constraints(),
            judge,
        )? {
            return Err(HirError::Invariant(format!(
                "rewritten instruction of group {} rollout {index} is not satisfied by its response",
                group.id
            )));
        }
        out.push(ReplayTuple {
            instruction: rewritten,
            tokens: r.rollout.tokens.clone(),
            old_logprobs: r.rollout.logprobs.clone(),
            group: group.id,
            rollout: index,
            fill: FillKind::SelectedFailure,
            f_div: response_entropy(&r.rollout),
            f_int: r.integrity()?,
            lambda,
        });
    }
    Ok(out)
}

/// Replays successful rollouts unchanged until `needed` more tuples exist. Successes are
/// taken in index order and reused cyclically.
pub fn fill_with_successes<T: Scalar>(
    group: &SamplingGroup<T>,
    needed: usize,
    lambda: T,
) -> Result<Vec<ReplayTuple<T>>> {
    let successes: Vec<usize> = (0..group.rollouts.len())
        .filter(|&i| group.rollouts[i].success())
        .collect();
    if needed > 0 && successes.is_empty() {
        return Err(HirError::Invariant(format!(
            "group {} has neither enough failures nor any success to replay",
            group.id
        )));
    }
    (0..needed)
        .map(|n| {
            let index = successes[n % successes.len()];
            let r = &group.rollouts[index];
            Ok(ReplayTuple {
                instruction: group.instruction.clone(),
                tokens: r.rollout.tokens.clone(),
                old_logprobs: r.rollout.logprobs.clone(),
                group: group.id,
                rollout: index,
                fill: FillKind::SupplementarySuccess,
                f_div: response_entropy(&r.rollout),
                f_int: r.integrity()?,
                lambda,
            })
        })
        .collect()
}
