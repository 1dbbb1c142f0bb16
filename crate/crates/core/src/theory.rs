//! Numerical check that the unclipped replay surrogate equals a dual-preference expression.
//!
//! With constant advantages `A⁺` (winners), `A⁻` (losers) and `A′⁺` (rewritten replays), and
//! the per-token surrogate written as `π_old · ρ · A = π_θ · A`, the objective regroups into
//!
//! ```text
//! α₁ · E_w[π̄(y|q)] − β₁ · E_l[π̄(y|q)] + α₂ · E_r[π̄(y|q')] − β₂ · E_r[π̄(y|q)]
//! ```
//!
//! where `π̄` is the token-mean probability of a response and the expectations are plain means
//! over the winning, losing (non-replayed) and replayed responses.
//!
//! Responses are laid out as in the derivation: indices `0..k` are the replayed failures,
//! `k..G⁻` the remaining failures and `G⁻..m` the successes.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::Token;
use crate::error::{HirError, Result};
use crate::policy::{Architecture, Policy};

/// Default tolerance on `|LHS − RHS|`.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;

/// Number field the identity is evaluated in: `f64` for the tolerance check, [`BigRational`]
/// for an exact one.
pub trait Field: Clone + Num + PartialOrd + Debug {
    fn from_f64(x: f64) -> Self;
    fn from_usize(n: usize) -> Self;
    fn to_f64(&self) -> f64;
}

impl Field for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_usize(n: usize) -> Self {
        n as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Field for BigRational {
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite fixture value")
    }
    fn from_usize(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients<R> {
    pub alpha1: R,
    pub beta1: R,
    pub alpha2: R,
    pub beta2: R,
}

impl<R: Field> Coefficients<R> {
    pub fn all_positive(&self) -> bool {
        let z = R::zero();
        self.alpha1 > z && self.beta1 > z && self.alpha2 > z && self.beta2 > z
    }
}

/// `α₁ = (m−G⁻)/(m−k)·A⁺`, `β₁ = −(G⁻−k)/(m−k)·A⁻`, `α₂ = A′⁺`, `β₂ = −A⁻`.
pub fn decomposition_coefficients<R: Field>(
    m: usize,
    k: usize,
    g_minus: usize,
    a_plus: R,
    a_minus: R,
    a_prime_plus: R,
) -> Result<Coefficients<R>> {
    if !(k <= g_minus && g_minus <= m) || m == k {
        return Err(HirError::InvalidGrouping(format!(
            "need 0 ≤ k ≤ G⁻ ≤ m and m ≠ k (m = {m}, k = {k}, G⁻ = {g_minus})"
        )));
    }
    let denom = R::from_usize(m - k);
    Ok(Coefficients {
        alpha1: R::from_usize(m - g_minus) / denom.clone() * a_plus,
        beta1: R::zero() - R::from_usize(g_minus - k) / denom * a_minus.clone(),
        alpha2: a_prime_plus,
        beta2: R::zero() - a_minus,
    })
}

/// Per-token probabilities of one group, ready for both sides of the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFixture {
    pub m: usize,
    pub k: usize,
    pub g_minus: usize,
    pub a_plus: f64,
    pub a_minus: f64,
    pub a_prime_plus: f64,
    /// `π_θ(y_t | q, y_<t)` for each of the `m` responses.
    pub pi_theta: Vec<Vec<f64>>,
    /// `π_old(y_t | q, y_<t)` for each of the `m` responses.
    pub pi_old: Vec<Vec<f64>>,
    /// `π_θ(y_t | q', y_<t)` for the `k` replayed responses.
    pub pi_theta_rewritten: Vec<Vec<f64>>,
}

impl DecompositionFixture {
    fn check_shape(&self) -> Result<()> {
        let ok = self.pi_theta.len() == self.m
            && self.pi_old.len() == self.m
            && self.pi_theta_rewritten.len() == self.k
            && (0..self.m).all(|i| {
                !self.pi_theta[i].is_empty() && self.pi_theta[i].len() == self.pi_old[i].len()
            })
            && (0..self.k).all(|i| self.pi_theta_rewritten[i].len() == self.pi_theta[i].len());
        if ok {
            Ok(())
        } else {
            Err(HirError::InvalidGrouping(
                "fixture shape does not match m, k".into(),
            ))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fixture serializes")
    }
}

fn token_mean<R: Field>(values: impl Iterator<Item = R>, len: usize) -> R {
    values.fold(R::zero(), |a, b| a + b) / R::from_usize(len)
}

fn surrogate_term<R: Field>(theta: &[f64], old: &[f64], adv: &R, clip: Option<f64>) -> R {
    let terms = theta.iter().zip(old).map(|(&t, &o)| {
        let (t, o) = (R::from_f64(t), R::from_f64(o));
        let rho = t / o.clone();
        let plain = rho.clone() * adv.clone();
        let value = match clip {
            None => plain,
            Some(eps) => {
                let (lo, hi) = (R::from_f64(1.0 - eps), R::from_f64(1.0 + eps));
                let bounded = if rho < lo {
                    lo
                } else if rho > hi {
                    hi
                } else {
                    rho
                } * adv.clone();
                if plain < bounded {
                    plain
                } else {
                    bounded
                }
            }
        };
        o * value
    });
    token_mean(terms, theta.len())
}

/// Left-hand side: `1/(m−k)` over the non-replayed responses, `1/k` over the replayed ones
/// under `q` (advantage `A⁻`) and `1/k` over their rewrites under `q'` (advantage `A′⁺`).
/// Each token contributes `π_old · surrogate(ρ, A)`; `clip = None` is the unclipped form.
pub fn surrogate_value<R: Field>(f: &DecompositionFixture, clip: Option<f64>) -> Result<R> {
    f.check_shape()?;
    decomposition_coefficients(f.m, f.k, f.g_minus, 1.0, -1.0, 1.0)?;
    let (a_plus, a_minus, a_prime) = (
        R::from_f64(f.a_plus),
        R::from_f64(f.a_minus),
        R::from_f64(f.a_prime_plus),
    );
    let mut rest = R::zero();
    for i in f.k..f.m {
        let adv = if i < f.g_minus { &a_minus } else { &a_plus };
        rest = rest + surrogate_term(&f.pi_theta[i], &f.pi_old[i], adv, clip);
    }
    let mut value = rest / R::from_usize(f.m - f.k);
    if f.k > 0 {
        let mut replayed = R::zero();
        for i in 0..f.k {
            replayed = replayed + surrogate_term(&f.pi_theta[i], &f.pi_old[i], &a_minus, clip);
            replayed =
                replayed + surrogate_term(&f.pi_theta_rewritten[i], &f.pi_old[i], &a_prime, clip);
        }
        value = value + replayed / R::from_usize(f.k);
    }
    Ok(value)
}

pub fn unclipped_surrogate_value<R: Field>(f: &DecompositionFixture) -> Result<R> {
    surrogate_value(f, None)
}

fn mean_prob<R: Field>(rows: &[Vec<f64>]) -> R {
    if rows.is_empty() {
        return R::zero();
    }
    let sum = rows.iter().fold(R::zero(), |acc, row| {
        acc + token_mean(row.iter().map(|&p| R::from_f64(p)), row.len())
    });
    sum / R::from_usize(rows.len())
}

/// Right-hand side with the given coefficients; an empty group contributes zero.
pub fn dual_preference_value<R: Field>(f: &DecompositionFixture, c: &Coefficients<R>) -> Result<R> {
    f.check_shape()?;
    let winners = mean_prob::<R>(&f.pi_theta[f.g_minus..]);
    let losers = mean_prob::<R>(&f.pi_theta[f.k..f.g_minus]);
    let replay_rewritten = mean_prob::<R>(&f.pi_theta_rewritten);
    let replay_original = mean_prob::<R>(&f.pi_theta[..f.k]);
    Ok(
        c.alpha1.clone() * winners - c.beta1.clone() * losers + c.alpha2.clone() * replay_rewritten
            - c.beta2.clone() * replay_original,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub m: usize,
    pub k: usize,
    pub g_minus: usize,
    pub a_plus: f64,
    pub a_minus: f64,
    pub a_prime_plus: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
}

/// Knobs for negative tests of the identity.
#[derive(Clone, Copy, Default)]
pub struct CheckOptions {
    /// Evaluate the left-hand side with the clipped surrogate.
    pub clip: Option<f64>,
    /// Tamper with the coefficients before evaluating the right-hand side.
    pub perturb: Option<fn(&mut Coefficients<f64>)>,
}

pub fn decompose(f: &DecompositionFixture, options: CheckOptions) -> Result<DecompositionReport> {
    let mut c =
        decomposition_coefficients(f.m, f.k, f.g_minus, f.a_plus, f.a_minus, f.a_prime_plus)?;
    if let Some(perturb) = options.perturb {
        perturb(&mut c);
    }
    let lhs: f64 = surrogate_value(f, options.clip)?;
    let rhs = dual_preference_value(f, &c)?;
    Ok(DecompositionReport {
        m: f.m,
        k: f.k,
        g_minus: f.g_minus,
        a_plus: f.a_plus,
        a_minus: f.a_minus,
        a_prime_plus: f.a_prime_plus,
        alpha1: c.alpha1,
        beta1: c.beta1,
        alpha2: c.alpha2,
        beta2: c.beta2,
        lhs,
        rhs,
        difference: (lhs - rhs).abs(),
    })
}

/// `LHS − RHS` in exact rational arithmetic over the fixture's (binary) probabilities.
pub fn exact_difference(f: &DecompositionFixture) -> Result<BigRational> {
    let r = |x: f64| BigRational::from_f64(x);
    let c = decomposition_coefficients(
        f.m,
        f.k,
        f.g_minus,
        r(f.a_plus),
        r(f.a_minus),
        r(f.a_prime_plus),
    )?;
    Ok(unclipped_surrogate_value::<BigRational>(f)? - dual_preference_value(f, &c)?)
}

/// Builds a fixture from two real policies: `theta` (current) and `old` (generation-time),
/// contexts `q` and `q'` and the `m` responses in derivation order.
#[allow(clippy::too_many_arguments)]
pub fn fixture_from_policies(
    theta: &Policy<f64>,
    old: &Policy<f64>,
    q: &[Token],
    q_rewritten: &[Token],
    responses: &[Vec<Token>],
    k: usize,
    g_minus: usize,
    advantages: (f64, f64, f64),
) -> Result<DecompositionFixture> {
    let probs = |p: &Policy<f64>, ctx: &[Token], y: &[Token]| -> Result<Vec<f64>> {
        Ok(p.logprob_sequence(ctx, y)?
            .into_iter()
            .map(f64::exp)
            .collect())
    };
    let m = responses.len();
    let fixture = DecompositionFixture {
        m,
        k,
        g_minus,
        a_plus: advantages.0,
        a_minus: advantages.1,
        a_prime_plus: advantages.2,
        pi_theta: responses
            .iter()
            .map(|y| probs(theta, q, y))
            .collect::<Result<_>>()?,
        pi_old: responses
            .iter()
            .map(|y| probs(old, q, y))
            .collect::<Result<_>>()?,
        pi_theta_rewritten: responses[..k.min(m)]
            .iter()
            .map(|y| probs(theta, q_rewritten, y))
            .collect::<Result<_>>()?,
    };
    fixture.check_shape()?;
    Ok(fixture)
}

/// A random fixture: `m ≤ 8`, vocabulary ≤ 8, responses of 1..=6 tokens, `0 < k < G⁻ < m`,
/// positive/negative advantages, and an old policy that is a perturbed copy of the current one.
pub fn random_fixture(rng: &mut impl Rng) -> Result<DecompositionFixture> {
    let vocab = rng.gen_range(3..=8usize);
    let m = rng.gen_range(3..=8usize);
    let k = rng.gen_range(1..=m - 2);
    let g_minus = rng.gen_range(k + 1..=m - 1);
    let theta = Policy::<f64>::random(Architecture::probe(vocab), 0.8, rng);
    let mut old = theta.clone();
    for w in old.params_mut() {
        *w += rng.gen_range(-0.4..0.4);
    }
    let tok = |rng: &mut dyn rand::RngCore| rng.gen_range(0..vocab as Token);
    let q: Vec<Token> = (0..rng.gen_range(2..=6)).map(|_| tok(rng)).collect();
    // A rewrite drops a nonempty suffix of the instruction.
    let q_rewritten = q[..rng.gen_range(1..q.len())].to_vec();
    let responses: Vec<Vec<Token>> = (0..m)
        .map(|_| (0..rng.gen_range(1..=6)).map(|_| tok(rng)).collect())
        .collect();
    let advantages = (
        rng.gen_range(0.1..2.0),
        -rng.gen_range(0.1..2.0),
        rng.gen_range(0.1..2.0),
    );
    fixture_from_policies(
        &theta,
        &old,
        &q,
        &q_rewritten,
        &responses,
        k,
        g_minus,
        advantages,
    )
}

/// Runs `trials` random fixtures; fails with the offending fixture on the first violation of
/// the tolerance or of coefficient positivity.
pub fn check_equivalence(
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<DecompositionReport>> {
    check_equivalence_with(trials, seed, tolerance, CheckOptions::default())
}

pub fn check_equivalence_with(
    trials: usize,
    seed: u64,
    tolerance: f64,
    options: CheckOptions,
) -> Result<Vec<DecompositionReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(trials);
    for _ in 0..trials {
        let fixture = random_fixture(&mut rng)?;
        let report = decompose(&fixture, options)?;
        let positive =
            report.alpha1 > 0.0 && report.beta1 > 0.0 && report.alpha2 > 0.0 && report.beta2 > 0.0;
        if !(report.difference <= tolerance) || !positive {
            return Err(HirError::EquivalenceViolation {
                difference: report.difference,
                fixture: fixture.to_json(),
            });
        }
        reports.push(report);
    }
    Ok(reports)
}
