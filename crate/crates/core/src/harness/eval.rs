//! Held-out evaluation: ILA/CLA aggregates and the pass@k estimator.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{cla_from_mask, evaluate_mask, ila_from_mask, Judge};
use crate::error::{HirError, Result};
use crate::instructions::InstructionDataset;
use crate::policy::Policy;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub temperature: f64,
    /// Decode greedily instead of sampling.
    pub greedy: bool,
    pub repeats: usize,
    /// Evaluate every this many steps during training; 0 evaluates only after the last step.
    pub every: usize,
    /// Samples per instruction for pass@k.
    pub pass_n: usize,
    pub pass_k: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            greedy: false,
            repeats: 5,
            every: 25,
            pass_n: 16,
            pass_k: vec![1, 2, 4, 8, 16],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || self.repeats == 0 {
            return Err(HirError::Config(
                "evaluation needs temperature > 0 and repeats ≥ 1".into(),
            ));
        }
        if let Some(&k) = self.pass_k.iter().find(|&&k| k == 0 || k > self.pass_n) {
            return Err(HirError::InvalidK { n: self.pass_n, k });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionEval {
    pub index: usize,
    pub ila: f64,
    pub cla: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ila: f64,
    pub cla: f64,
    pub per_instruction: Vec<InstructionEval>,
}

/// Mean ILA and CLA over instructions, each averaged over `repeats` responses.
/// The policy is only read.
pub fn evaluate<T: Scalar>(
    policy: &Policy<T>,
    dataset: &InstructionDataset,
    judge: &dyn Judge,
    config: &EvalConfig,
    max_len: usize,
    seed: u64,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(HirError::Config("evaluation dataset is empty".into()));
    }
    let per_instruction = dataset
        .instructions
        .par_iter()
        .enumerate()
        .map(|(index, q)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let (mut ila, mut cla) = (0.0, 0.0);
            for _ in 0..config.repeats {
                let y = if config.greedy {
                    policy.greedy_response(q.rendered(), max_len)
                } else {
                    policy
                        .sample_response(q.rendered(), &mut rng, max_len, config.temperature)
                        .tokens
                };
                let mask = evaluate_mask(q, &y, q.constraints(), judge)?;
                ila += if ila_from_mask(&mask) { 1.0 } else { 0.0 };
                cla += cla_from_mask(&mask)?;
            }
            let r = config.repeats as f64;
            Ok(InstructionEval {
                index,
                ila: ila / r,
                cla: cla / r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_instruction.len() as f64;
    Ok(EvalReport {
        ila: per_instruction.iter().map(|e| e.ila).sum::<f64>() / n,
        cla: per_instruction.iter().map(|e| e.cla).sum::<f64>() / n,
        per_instruction,
    })
}

fn check_k(n: usize, c: usize, k: usize) -> Result<()> {
    if k == 0 || k > n || c > n {
        return Err(HirError::InvalidK { n, k });
    }
    Ok(())
}

/// Unbiased pass@k, `1 − C(n−c, k)/C(n, k)`, as a running product so no binomial is formed.
pub fn pass_at_k_counts(n: usize, c: usize, k: usize) -> Result<f64> {
    check_k(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// pass@k from per-sample success flags.
pub fn pass_at_k(successes: &[bool], k: usize) -> Result<f64> {
    pass_at_k_counts(successes.len(), successes.iter().filter(|&&s| s).count(), k)
}

fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    (0..k).fold(BigInt::one(), |acc, i| {
        acc * BigInt::from(n - i) / BigInt::from(i + 1)
    })
}

/// The same estimator in exact rational arithmetic.
pub fn pass_at_k_exact(n: usize, c: usize, k: usize) -> Result<BigRational> {
    check_k(n, c, k)?;
    Ok(BigRational::one() - BigRational::new(binomial(n - c, k), binomial(n, k)))
}

/// Mean pass@k over the dataset for each requested `k`, from `n` samples per instruction.
#[allow(clippy::too_many_arguments)]
pub fn pass_at_k_curve<T: Scalar>(
    policy: &Policy<T>,
    dataset: &InstructionDataset,
    judge: &dyn Judge,
    n: usize,
    ks: &[usize],
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    for &k in ks {
        check_k(n, 0, k)?;
    }
    let counts = dataset
        .instructions
        .par_iter()
        .enumerate()
        .map(|(index, q)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let mut c = 0;
            for _ in 0..n {
                let y = policy.sample_response(q.rendered(), &mut rng, max_len, temperature);
                if ila_from_mask(&evaluate_mask(q, &y.tokens, q.constraints(), judge)?) {
                    c += 1;
                }
            }
            Ok(c)
        })
        .collect::<Result<Vec<usize>>>()?;
    ks.iter()
        .map(|&k| {
            let total = counts
                .iter()
                .map(|&c| pass_at_k_counts(n, c, k))
                .sum::<Result<f64>>()?;
            Ok((k, total / counts.len().max(1) as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_at_k_reference_values() {
        assert!((pass_at_k_counts(10, 3, 5).unwrap() - 11.0 / 12.0).abs() < 1e-12);
        assert_eq!(
            pass_at_k_exact(10, 3, 5).unwrap(),
            BigRational::new(11.into(), 12.into())
        );
        for k in 1..=6 {
            assert_eq!(pass_at_k_counts(6, 6, k).unwrap(), 1.0);
            assert_eq!(pass_at_k_counts(6, 0, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn pass_at_k_rejects_bad_k() {
        assert!(matches!(
            pass_at_k_counts(4, 1, 0),
            Err(HirError::InvalidK { .. })
        ));
        assert!(matches!(
            pass_at_k_counts(4, 1, 5),
            Err(HirError::InvalidK { .. })
        ));
        assert!(matches!(pass_at_k(&[], 1), Err(HirError::InvalidK { .. })));
    }

    #[test]
    fn product_form_matches_exact_form() {
        for n in 1..=20 {
            for c in 0..=n {
                let mut prev = 0.0;
                for k in 1..=n {
                    let p = pass_at_k_counts(n, c, k).unwrap();
                    let exact: f64 =
                        num_traits::ToPrimitive::to_f64(&pass_at_k_exact(n, c, k).unwrap())
                            .unwrap();
                    assert!((p - exact).abs() < 1e-12, "n={n} c={c} k={k}");
                    assert!(p >= prev - 1e-15);
                    prev = p;
                }
            }
        }
    }

    #[test]
    fn flags_count_successes() {
        let flags = [true, false, false, true, false];
        assert!((pass_at_k(&flags, 1).unwrap() - 0.4).abs() < 1e-12);
    }
}
