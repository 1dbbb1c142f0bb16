//! Instructions, rendering by concatenation, hindsight rewriting and synthetic dataset generation.

use std::collections::{BTreeSet, HashSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{
    content, instruction_level_accuracy, Constraint, ConstraintKind, ConstraintSet, MockJudge,
    Token, Vocab, EOS, SEP, SOFT_KEYS,
};
use crate::error::{HirError, Result};

/// Task stem plus an ordered constraint set, with its rendering cached.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    stem: Vec<Token>,
    constraints: ConstraintSet,
    rendered: Vec<Token>,
}

fn concat(stem: &[Token], set: &ConstraintSet) -> Vec<Token> {
    let mut out = stem.to_vec();
    for c in set {
        out.push(SEP);
        out.extend_from_slice(c.surface());
    }
    out
}

/// `x ⊙ s(c1) ⊙ ... ⊙ s(cn)` with a separator in front of every constraint surface.
pub fn render_instruction(
    stem: &[Token],
    set: &ConstraintSet,
    vocab: &Vocab,
) -> Result<Vec<Token>> {
    let rendered = concat(stem, set);
    for &t in &rendered {
        vocab.check(t)?;
    }
    Ok(rendered)
}

impl Instruction {
    pub fn new(stem: Vec<Token>, constraints: ConstraintSet, vocab: &Vocab) -> Result<Self> {
        let rendered = render_instruction(&stem, &constraints, vocab)?;
        Ok(Self {
            stem,
            constraints,
            rendered,
        })
    }

    pub fn stem(&self) -> &[Token] {
        &self.stem
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn rendered(&self) -> &[Token] {
        &self.rendered
    }
}

/// Drops the constraints whose mask entry is false. An all-false mask leaves the bare stem.
pub fn rewrite_instruction(q: &Instruction, mask: &[bool]) -> Result<Instruction> {
    let constraints = q.constraints.subset(mask)?;
    let rendered = concat(&q.stem, &constraints);
    Ok(Instruction {
        stem: q.stem.clone(),
        constraints,
        rendered,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindWeights {
    pub contains: f64,
    pub forbids: f64,
    pub length_exactly: f64,
    pub length_at_most: f64,
    pub length_at_least: f64,
    pub starts_with: f64,
    pub ends_with: f64,
    pub count_of: f64,
}

impl KindWeights {
    fn as_array(&self) -> [f64; 8] {
        [
            self.contains,
            self.forbids,
            self.length_exactly,
            self.length_at_most,
            self.length_at_least,
            self.starts_with,
            self.ends_with,
            self.count_of,
        ]
    }
}

/// Generation parameters for a synthetic instruction family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub vocab: Vocab,
    /// Inclusive range of stem lengths.
    pub stem_len: [usize; 2],
    /// Inclusive range of constraints per instruction.
    pub constraints: [usize; 2],
    pub weights: KindWeights,
    /// Probability that a constraint slot is filled by a soft constraint.
    pub soft_fraction: f64,
    /// Inclusive range for length parameters.
    pub length_param: [u32; 2],
    /// Inclusive range for token-count parameters.
    pub count_param: [u32; 2],
    /// Longest response content the satisfiability search considers.
    pub length_budget: u32,
    /// Sampling cap, end-of-sequence included.
    pub max_response_len: usize,
    /// Instructions a uniform random policy solves at least this often are rejected.
    pub random_success_ceiling: Option<f64>,
    /// Uniform-policy draws per instruction for the rejection filter.
    pub instruction_probe_samples: usize,
    /// Uniform-policy draws for the dataset-level success estimate.
    pub dataset_probe_samples: usize,
    pub max_attempts: usize,
}

impl TaskSpec {
    /// Five to seven constraints per instruction with a soft share.
    pub fn paper_like() -> Self {
        Self {
            vocab: Vocab::new(10, 10),
            stem_len: [1, 2],
            constraints: [5, 7],
            weights: KindWeights {
                contains: 3.0,
                forbids: 2.0,
                length_exactly: 0.5,
                length_at_most: 1.5,
                length_at_least: 1.0,
                starts_with: 1.0,
                ends_with: 1.0,
                count_of: 0.5,
            },
            soft_fraction: 0.25,
            length_param: [2, 9],
            count_param: [1, 2],
            length_budget: 9,
            max_response_len: 10,
            random_success_ceiling: None,
            instruction_probe_samples: 0,
            dataset_probe_samples: 0,
            max_attempts: 500,
        }
    }

    /// Exactly five constraints, jointly satisfiable, and rarely solved by a uniform policy.
    pub fn hard_family() -> Self {
        Self {
            vocab: Vocab::new(8, 8),
            stem_len: [1, 1],
            constraints: [5, 5],
            weights: KindWeights {
                contains: 3.0,
                forbids: 2.0,
                length_exactly: 0.0,
                length_at_most: 1.5,
                length_at_least: 1.0,
                starts_with: 1.0,
                ends_with: 1.0,
                count_of: 0.0,
            },
            soft_fraction: 0.1,
            length_param: [2, 6],
            count_param: [1, 2],
            length_budget: 7,
            max_response_len: 8,
            random_success_ceiling: Some(0.02),
            instruction_probe_samples: 2000,
            dataset_probe_samples: 100_000,
            max_attempts: 500,
        }
    }

    /// Two or three constraints; fast fixtures for unit tests.
    pub fn tiny() -> Self {
        Self {
            vocab: Vocab::new(6, 5),
            stem_len: [1, 2],
            constraints: [2, 3],
            weights: KindWeights {
                contains: 2.0,
                forbids: 1.0,
                length_exactly: 0.5,
                length_at_most: 1.0,
                length_at_least: 0.5,
                starts_with: 1.0,
                ends_with: 1.0,
                count_of: 0.5,
            },
            soft_fraction: 0.2,
            length_param: [1, 5],
            count_param: [1, 2],
            length_budget: 5,
            max_response_len: 6,
            random_success_ceiling: None,
            instruction_probe_samples: 0,
            dataset_probe_samples: 0,
            max_attempts: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HirError::InvalidSpec(m));
        if self.stem_len[0] > self.stem_len[1] || self.stem_len[1] == 0 {
            return bad(format!("stem length range {:?}", self.stem_len));
        }
        if self.constraints[0] > self.constraints[1] {
            return bad(format!("constraint count range {:?}", self.constraints));
        }
        if self.length_param[0] > self.length_param[1] || self.count_param[0] > self.count_param[1]
        {
            return bad("parameter ranges must be nonempty".into());
        }
        let w = self.weights.as_array();
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return bad("kind weights must be nonnegative with a positive sum".into());
        }
        if !(0.0..=1.0).contains(&self.soft_fraction) {
            return bad(format!("soft fraction {}", self.soft_fraction));
        }
        if self.vocab.content < 3 {
            return bad("at least three content tokens are required".into());
        }
        let top = self.length_param[1]
            .max(self.count_param[1])
            .max(SOFT_KEYS.len() as u32 - 1);
        if top >= self.vocab.numbers {
            return bad(format!(
                "numbers up to {top} need {} number tokens, vocabulary has {}",
                top + 1,
                self.vocab.numbers
            ));
        }
        if self.max_response_len == 0 {
            return bad("max response length must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstructionDataset {
    pub spec: TaskSpec,
    pub seed: u64,
    pub instructions: Vec<Instruction>,
    /// Dataset-level uniform-policy success estimate, when probed.
    pub random_success: Option<f64>,
}

impl InstructionDataset {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

fn draw_constraint(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<Constraint> {
    let v = &spec.vocab;
    let token = |rng: &mut ChaCha8Rng| v.content_token(rng.gen_range(0..v.content));
    let kind = if rng.gen_bool(spec.soft_fraction) {
        ConstraintKind::Soft {
            key: SOFT_KEYS[rng.gen_range(0..SOFT_KEYS.len())].0.to_string(),
        }
    } else {
        let pick = WeightedIndex::new(spec.weights.as_array())
            .expect("validated weights")
            .sample(rng);
        let len = |rng: &mut ChaCha8Rng| rng.gen_range(spec.length_param[0]..=spec.length_param[1]);
        match pick {
            0 => ConstraintKind::ContainsToken { token: token(rng) },
            1 => ConstraintKind::ForbidsToken { token: token(rng) },
            2 => ConstraintKind::LengthExactly { length: len(rng) },
            3 => ConstraintKind::LengthAtMost { length: len(rng) },
            4 => ConstraintKind::LengthAtLeast { length: len(rng) },
            5 => ConstraintKind::StartsWithToken { token: token(rng) },
            6 => ConstraintKind::EndsWithToken { token: token(rng) },
            _ => ConstraintKind::TokenCountOfExactly {
                token: token(rng),
                count: rng.gen_range(spec.count_param[0]..=spec.count_param[1]),
            },
        }
    };
    Constraint::new(kind, v)
}

/// Draws one uniform-policy response: every vocabulary token (end of sequence included) equally
/// likely at each step, stopping at end of sequence or the length cap.
pub fn uniform_response(vocab: &Vocab, max_len: usize, rng: &mut impl Rng) -> Vec<Token> {
    let v = vocab.size() as u32;
    let mut y = Vec::with_capacity(max_len);
    while y.len() < max_len {
        let t = rng.gen_range(0..v);
        y.push(t);
        if t == EOS {
            break;
        }
    }
    y
}

/// Monte-Carlo success rate of the uniform policy on one instruction.
pub fn uniform_success_rate(
    q: &Instruction,
    spec: &TaskSpec,
    judge: &MockJudge,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut hits = 0usize;
    for _ in 0..samples {
        let y = uniform_response(&spec.vocab, spec.max_response_len, rng);
        if instruction_level_accuracy(q, &y, q.constraints(), judge)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.max(1) as f64)
}

/// Exhaustive search for a response content of length at most `budget` satisfying every
/// constraint. Tokens the constraints never mention are interchangeable, so the alphabet is the
/// mentioned tokens plus two fillers; failed search states are memoized.
pub fn find_witness(
    set: &ConstraintSet,
    vocab: &Vocab,
    judge: &MockJudge,
    budget: u32,
) -> Result<Option<Vec<Token>>> {
    let mut mentioned: BTreeSet<Token> = BTreeSet::new();
    for c in set {
        match c.kind() {
            ConstraintKind::ContainsToken { token }
            | ConstraintKind::ForbidsToken { token }
            | ConstraintKind::StartsWithToken { token }
            | ConstraintKind::EndsWithToken { token }
            | ConstraintKind::TokenCountOfExactly { token, .. } => {
                mentioned.insert(*token);
            }
            ConstraintKind::Soft { .. } => {
                // the mock predicates look at the first three content tokens
                for i in 0..3 {
                    mentioned.insert(vocab.content_token(i));
                }
            }
            _ => {}
        }
    }
    let mut alphabet: Vec<Token> = mentioned.iter().copied().collect();
    alphabet.extend(
        (1..vocab.size() as Token)
            .filter(|t| !mentioned.contains(t))
            .take(2),
    );

    let mut max_len = budget;
    for c in set {
        match c.kind() {
            ConstraintKind::LengthAtMost { length } | ConstraintKind::LengthExactly { length } => {
                max_len = max_len.min(*length)
            }
            _ => {}
        }
    }

    let dummy = Instruction {
        stem: Vec::new(),
        constraints: ConstraintSet::empty(),
        rendered: Vec::new(),
    };
    let mut search = Search {
        set,
        judge,
        alphabet: &alphabet,
        max_len: max_len as usize,
        dead: HashSet::new(),
        q: &dummy,
    };
    let mut prefix = Vec::new();
    search.dfs(&mut prefix)
}

struct Search<'a> {
    set: &'a ConstraintSet,
    judge: &'a MockJudge,
    alphabet: &'a [Token],
    max_len: usize,
    dead: HashSet<Vec<u32>>,
    q: &'a Instruction,
}

impl Search<'_> {
    /// State signature: length, first and last token, and per-alphabet counts capped at the
    /// largest threshold any constraint could care about.
    fn signature(&self, prefix: &[Token]) -> Vec<u32> {
        let mut sig = vec![
            prefix.len() as u32,
            prefix.first().copied().unwrap_or(u32::MAX),
            prefix.last().copied().unwrap_or(u32::MAX),
        ];
        for &a in self.alphabet {
            let n = prefix.iter().filter(|&&t| t == a).count() as u32;
            sig.push(n.min(4));
        }
        sig
    }

    fn prefix_feasible(&self, prefix: &[Token]) -> bool {
        let remaining = self.max_len - prefix.len();
        let mut needed = 0usize;
        for c in self.set {
            match *c.kind() {
                ConstraintKind::ForbidsToken { token } => {
                    if prefix.contains(&token) {
                        return false;
                    }
                }
                ConstraintKind::StartsWithToken { token } => {
                    if prefix.first().is_some_and(|&f| f != token) {
                        return false;
                    }
                }
                ConstraintKind::ContainsToken { token } => {
                    if !prefix.contains(&token) {
                        needed += 1;
                    }
                }
                ConstraintKind::TokenCountOfExactly { token, count } => {
                    let have = prefix.iter().filter(|&&t| t == token).count();
                    if have > count as usize {
                        return false;
                    }
                    needed += count as usize - have;
                }
                ConstraintKind::LengthAtLeast { length }
                | ConstraintKind::LengthExactly { length } => {
                    needed = needed.max((length as usize).saturating_sub(prefix.len()));
                }
                _ => {}
            }
        }
        needed <= remaining
    }

    fn accepts(&self, prefix: &[Token]) -> Result<bool> {
        instruction_level_accuracy(self.q, prefix, self.set, self.judge)
    }

    fn dfs(&mut self, prefix: &mut Vec<Token>) -> Result<Option<Vec<Token>>> {
        if !self.prefix_feasible(prefix) {
            return Ok(None);
        }
        if content(prefix).len() == prefix.len() && self.accepts(prefix)? {
            return Ok(Some(prefix.clone()));
        }
        if prefix.len() == self.max_len {
            return Ok(None);
        }
        let sig = self.signature(prefix);
        if self.dead.contains(&sig) {
            return Ok(None);
        }
        for i in 0..self.alphabet.len() {
            prefix.push(self.alphabet[i]);
            let found = self.dfs(prefix)?;
            prefix.pop();
            if found.is_some() {
                return Ok(found);
            }
        }
        self.dead.insert(sig);
        Ok(None)
    }
}

/// Generates `n` jointly satisfiable instructions, deterministic in `(spec, seed)`.
pub fn generate_dataset(spec: &TaskSpec, n: usize, seed: u64) -> Result<InstructionDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(HirError::InvalidSpec(
            "dataset size must be positive".into(),
        ));
    }
    let vocab = spec.vocab;
    let judge = MockJudge::new(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed);
    probe_rng.set_stream(1);

    let mut instructions = Vec::with_capacity(n);
    for _ in 0..n {
        let mut accepted = None;
        let mut satisfiable_seen = false;
        for _ in 0..spec.max_attempts {
            let stem_len = rng.gen_range(spec.stem_len[0]..=spec.stem_len[1]);
            let stem: Vec<Token> = (0..stem_len)
                .map(|_| vocab.content_token(rng.gen_range(0..vocab.content)))
                .collect();
            let count = rng.gen_range(spec.constraints[0]..=spec.constraints[1]);
            let mut picked: Vec<Constraint> = Vec::with_capacity(count);
            let mut guard = 0;
            while picked.len() < count && guard < 50 * count.max(1) {
                guard += 1;
                let c = draw_constraint(spec, &mut rng)?;
                if picked.iter().all(|p| p.id() != c.id()) {
                    picked.push(c);
                }
            }
            if picked.len() < count {
                continue;
            }
            let set = ConstraintSet::new(picked)?;
            if find_witness(&set, &vocab, &judge, spec.length_budget)?.is_none() {
                continue;
            }
            satisfiable_seen = true;
            let q = Instruction::new(stem, set, &vocab)?;
            if let Some(ceiling) = spec.random_success_ceiling {
                let rate = uniform_success_rate(
                    &q,
                    spec,
                    &judge,
                    spec.instruction_probe_samples,
                    &mut probe_rng,
                )?;
                if rate >= ceiling {
                    continue;
                }
            }
            accepted = Some(q);
            break;
        }
        match accepted {
            Some(q) => instructions.push(q),
            None if !satisfiable_seen => {
                return Err(HirError::UnsatisfiableSpec(format!(
                    "no satisfying response of length <= {} in {} attempts",
                    spec.length_budget, spec.max_attempts
                )))
            }
            None => {
                return Err(HirError::InvalidSpec(format!(
                    "every satisfiable draw in {} attempts is solved by a uniform policy too often",
                    spec.max_attempts
                )))
            }
        }
    }

    let random_success = if spec.dataset_probe_samples > 0 {
        let mut hits = 0usize;
        for _ in 0..spec.dataset_probe_samples {
            let q = &instructions[probe_rng.gen_range(0..instructions.len())];
            let y = uniform_response(&vocab, spec.max_response_len, &mut probe_rng);
            if instruction_level_accuracy(q, &y, q.constraints(), &judge)? {
                hits += 1;
            }
        }
        let rate = hits as f64 / spec.dataset_probe_samples as f64;
        if let Some(ceiling) = spec.random_success_ceiling {
            if rate >= ceiling {
                return Err(HirError::InvalidSpec(format!(
                    "uniform-policy success {rate} is not below {ceiling}"
                )));
            }
        }
        Some(rate)
    } else {
        None
    };

    Ok(InstructionDataset {
        spec: spec.clone(),
        seed,
        instructions,
        random_success,
    })
}
