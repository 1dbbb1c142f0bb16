//! Atomic constraints over token responses, their verifiers, and the two accuracy metrics.
//!
//! Everything here is token-level. A response is scored on its *content*: the sampled tokens
//! with a trailing end-of-sequence token removed.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{HirError, Result};
use crate::instructions::Instruction;

pub type Token = u32;

/// End of sequence. Sampling stops when the policy emits it.
pub const EOS: Token = 0;
/// Separator placed in front of every rendered constraint.
pub const SEP: Token = 1;

const MARKER_BASE: Token = 2;
const MARKER_COUNT: Token = 9;
const NUMBER_BASE: Token = MARKER_BASE + MARKER_COUNT;

/// Reserved marker token announcing the kind of a rendered constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Marker {
    Contains = 0,
    Forbids,
    LengthExactly,
    LengthAtMost,
    LengthAtLeast,
    StartsWith,
    EndsWith,
    CountOf,
    Soft,
}

/// Token layout: `EOS`, `SEP`, nine kind markers, `numbers` number tokens, then `content`
/// free tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub numbers: u32,
    pub content: u32,
}

impl Vocab {
    pub fn new(numbers: u32, content: u32) -> Self {
        Self { numbers, content }
    }

    pub fn size(&self) -> usize {
        (NUMBER_BASE + self.numbers + self.content) as usize
    }

    pub fn marker(&self, m: Marker) -> Token {
        MARKER_BASE + m as Token
    }

    pub fn number(&self, n: u32) -> Result<Token> {
        if n >= self.numbers {
            return Err(HirError::InvalidConstraint(format!(
                "number {n} has no token (vocabulary holds numbers 0..{})",
                self.numbers
            )));
        }
        Ok(NUMBER_BASE + n)
    }

    pub fn content_token(&self, i: u32) -> Token {
        assert!(i < self.content, "content index {i} out of range");
        NUMBER_BASE + self.numbers + i
    }

    pub fn content_tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.content).map(|i| self.content_token(i))
    }

    pub fn is_content(&self, t: Token) -> bool {
        t >= NUMBER_BASE + self.numbers && (t as usize) < self.size()
    }

    pub fn check(&self, t: Token) -> Result<()> {
        if (t as usize) < self.size() {
            Ok(())
        } else {
            Err(HirError::VocabularyOverflow {
                token: t,
                vocab: self.size(),
            })
        }
    }

    /// Human-readable spelling of a token, used when talking to a remote judge.
    pub fn spell(&self, t: Token) -> String {
        match t {
            EOS => "<eos>".to_string(),
            SEP => "|".to_string(),
            t if t < NUMBER_BASE => {
                const NAMES: [&str; 9] = [
                    "contains", "forbids", "length=", "length<=", "length>=", "starts", "ends",
                    "count", "style",
                ];
                format!("[{}]", NAMES[(t - MARKER_BASE) as usize])
            }
            t if t < NUMBER_BASE + self.numbers => format!("{}", t - NUMBER_BASE),
            t => format!("w{}", t - NUMBER_BASE - self.numbers),
        }
    }

    pub fn spell_all(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| self.spell(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Catalogue of soft-constraint keys with the criteria text sent to a remote judge.
/// The position in this table is the number token used when rendering the constraint.
pub const SOFT_KEYS: &[(&str, &str)] = &[
    (
        "contains-greeting",
        "The generated text opens the exchange politely by including a greeting word (w0).",
    ),
    (
        "polite-tone",
        "The generated text keeps a polite tone by including the courtesy word (w1).",
    ),
    (
        "no-adjacent-repeats",
        "The generated text never repeats the same word twice in a row.",
    ),
    (
        "closing-signoff",
        "The generated text ends with the sign-off word (w2).",
    ),
];

pub fn soft_key_index(key: &str) -> Option<usize> {
    SOFT_KEYS.iter().position(|(k, _)| *k == key)
}

pub fn soft_key_criteria(key: &str) -> Option<&'static str> {
    SOFT_KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ConstraintKind {
    ContainsToken { token: Token },
    ForbidsToken { token: Token },
    LengthExactly { length: u32 },
    LengthAtMost { length: u32 },
    LengthAtLeast { length: u32 },
    StartsWithToken { token: Token },
    EndsWithToken { token: Token },
    TokenCountOfExactly { token: Token, count: u32 },
    Soft { key: String },
}

impl ConstraintKind {
    pub fn is_soft(&self) -> bool {
        matches!(self, ConstraintKind::Soft { .. })
    }

    fn id(&self) -> String {
        use ConstraintKind::*;
        match self {
            ContainsToken { token } => format!("contains:{token}"),
            ForbidsToken { token } => format!("forbids:{token}"),
            LengthExactly { length } => format!("len-eq:{length}"),
            LengthAtMost { length } => format!("len-le:{length}"),
            LengthAtLeast { length } => format!("len-ge:{length}"),
            StartsWithToken { token } => format!("starts:{token}"),
            EndsWithToken { token } => format!("ends:{token}"),
            TokenCountOfExactly { token, count } => format!("count:{token}x{count}"),
            Soft { key } => format!("soft:{key}"),
        }
    }
}

/// One atomic, individually verifiable requirement.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Constraint {
    id: String,
    kind: ConstraintKind,
    surface: Vec<Token>,
}

impl Constraint {
    /// Validates `kind` against the vocabulary and derives the id and rendered surface.
    pub fn new(kind: ConstraintKind, vocab: &Vocab) -> Result<Self> {
        use ConstraintKind::*;
        let tok = |t: Token| -> Result<Token> {
            if vocab.is_content(t) {
                Ok(t)
            } else {
                Err(HirError::InvalidConstraint(format!(
                    "token {t} is not a content token"
                )))
            }
        };
        let surface = match &kind {
            ContainsToken { token } => vec![vocab.marker(Marker::Contains), tok(*token)?],
            ForbidsToken { token } => vec![vocab.marker(Marker::Forbids), tok(*token)?],
            LengthExactly { length } => {
                vec![vocab.marker(Marker::LengthExactly), vocab.number(*length)?]
            }
            LengthAtMost { length } => {
                vec![vocab.marker(Marker::LengthAtMost), vocab.number(*length)?]
            }
            LengthAtLeast { length } => {
                vec![vocab.marker(Marker::LengthAtLeast), vocab.number(*length)?]
            }
            StartsWithToken { token } => vec![vocab.marker(Marker::StartsWith), tok(*token)?],
            EndsWithToken { token } => vec![vocab.marker(Marker::EndsWith), tok(*token)?],
            TokenCountOfExactly { token, count } => vec![
                vocab.marker(Marker::CountOf),
                tok(*token)?,
                vocab.number(*count)?,
            ],
            Soft { key } => {
                let idx = soft_key_index(key).ok_or_else(|| {
                    HirError::InvalidConstraint(format!("soft key `{key}` is not catalogued"))
                })?;
                vec![vocab.marker(Marker::Soft), vocab.number(idx as u32)?]
            }
        };
        Ok(Self {
            id: kind.id(),
            kind,
            surface,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn surface(&self) -> &[Token] {
        &self.surface
    }

    pub fn is_soft(&self) -> bool {
        self.kind.is_soft()
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Ordered constraint set; order is the rendering order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConstraintSet(Vec<Constraint>);

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &constraints {
            if !seen.insert(c.id()) {
                return Err(HirError::DuplicateConstraint(c.id().to_string()));
            }
        }
        Ok(Self(constraints))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Constraint] {
        &self.0
    }

    pub fn ids(&self) -> Vec<String> {
        self.0.iter().map(|c| c.id.clone()).collect()
    }

    /// Keeps the constraints whose mask entry is set, in their original order.
    pub fn subset(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.0.len() {
            return Err(HirError::MaskLengthMismatch {
                expected: self.0.len(),
                got: mask.len(),
            });
        }
        Ok(Self(
            self.0
                .iter()
                .zip(mask)
                .filter(|(_, &keep)| keep)
                .map(|(c, _)| c.clone())
                .collect(),
        ))
    }
}

impl<'a> IntoIterator for &'a ConstraintSet {
    type Item = &'a Constraint;
    type IntoIter = std::slice::Iter<'a, Constraint>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictSource {
    Rule,
    MockJudge,
    RemoteJudge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JudgeVerdict {
    pub satisfied: bool,
    pub source: VerdictSource,
}

/// Evaluator for soft constraints.
pub trait Judge: Send + Sync {
    /// `instruction` is the rendered instruction, `response` the raw sampled tokens.
    fn judge(&self, key: &str, instruction: &[Token], response: &[Token]) -> Result<JudgeVerdict>;
}

/// Strips a single trailing end-of-sequence token.
pub fn content(y: &[Token]) -> &[Token] {
    match y.last() {
        Some(&EOS) => &y[..y.len() - 1],
        _ => y,
    }
}

type Predicate = fn(&Vocab, &[Token]) -> bool;

fn greeting(v: &Vocab, y: &[Token]) -> bool {
    y.contains(&v.content_token(0))
}

fn polite(v: &Vocab, y: &[Token]) -> bool {
    y.contains(&v.content_token(1))
}

fn no_repeats(_: &Vocab, y: &[Token]) -> bool {
    y.windows(2).all(|w| w[0] != w[1])
}

fn signoff(v: &Vocab, y: &[Token]) -> bool {
    y.last() == Some(&v.content_token(2))
}

/// Deterministic token-level stand-in for a judge model.
#[derive(Clone, Debug)]
pub struct MockJudge {
    vocab: Vocab,
    registered: Vec<(&'static str, Predicate)>,
}

impl MockJudge {
    /// Registers every catalogued soft key.
    pub fn new(vocab: Vocab) -> Self {
        assert!(
            vocab.content >= 3,
            "mock judge needs three designated content tokens"
        );
        Self {
            vocab,
            registered: vec![
                ("contains-greeting", greeting as Predicate),
                ("polite-tone", polite),
                ("no-adjacent-repeats", no_repeats),
                ("closing-signoff", signoff),
            ],
        }
    }

    /// Restricts the judge to the listed keys.
    pub fn with_keys(vocab: Vocab, keys: &[&str]) -> Self {
        let mut judge = Self::new(vocab);
        judge.registered.retain(|(k, _)| keys.contains(k));
        judge
    }

    /// Evaluates a registered predicate on the response content.
    pub fn mock_judge(&self, key: &str, y: &[Token]) -> Result<bool> {
        let (_, pred) = self
            .registered
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| HirError::UnknownJudgeKey(key.to_string()))?;
        Ok(pred(&self.vocab, content(y)))
    }
}

impl Judge for MockJudge {
    fn judge(&self, key: &str, _instruction: &[Token], response: &[Token]) -> Result<JudgeVerdict> {
        Ok(JudgeVerdict {
            satisfied: self.mock_judge(key, response)?,
            source: VerdictSource::MockJudge,
        })
    }
}

/// Memoizes soft verdicts per (key, instruction, response). Judges are pure, so caching
/// never changes a result.
pub struct CachedJudge<J> {
    inner: J,
    memo: Mutex<HashMap<(String, Vec<Token>, Vec<Token>), JudgeVerdict>>,
}

impl<J: Judge> CachedJudge<J> {
    pub fn new(inner: J) -> Self {
        Self {
            inner,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.memo.lock().expect("judge memo poisoned").len()
    }
}

impl<J: Judge> Judge for CachedJudge<J> {
    fn judge(&self, key: &str, instruction: &[Token], response: &[Token]) -> Result<JudgeVerdict> {
        let k = (key.to_string(), instruction.to_vec(), response.to_vec());
        if let Some(v) = self.memo.lock().expect("judge memo poisoned").get(&k) {
            return Ok(*v);
        }
        let v = self.inner.judge(key, instruction, response)?;
        self.memo.lock().expect("judge memo poisoned").insert(k, v);
        Ok(v)
    }
}

fn rule(kind: &ConstraintKind, y: &[Token]) -> bool {
    use ConstraintKind::*;
    let y = content(y);
    match *kind {
        ContainsToken { token } => y.contains(&token),
        ForbidsToken { token } => !y.contains(&token),
        LengthExactly { length } => y.len() == length as usize,
        LengthAtMost { length } => y.len() <= length as usize,
        LengthAtLeast { length } => y.len() >= length as usize,
        StartsWithToken { token } => y.first() == Some(&token),
        EndsWithToken { token } => y.last() == Some(&token),
        TokenCountOfExactly { token, count } => {
            y.iter().filter(|&&t| t == token).count() == count as usize
        }
        Soft { .. } => unreachable!("soft constraints go to the judge"),
    }
}

/// Binary indicator of one constraint: rules for hard kinds, the judge for soft ones.
pub fn verify_constraint(
    q: &Instruction,
    y: &[Token],
    c: &Constraint,
    judge: &dyn Judge,
) -> Result<JudgeVerdict> {
    match c.kind() {
        ConstraintKind::Soft { key } => judge.judge(key, q.rendered(), y),
        kind => Ok(JudgeVerdict {
            satisfied: rule(kind, y),
            source: VerdictSource::Rule,
        }),
    }
}

/// Satisfaction mask of `y` over `set`, in set order.
pub fn evaluate_mask(
    q: &Instruction,
    y: &[Token],
    set: &ConstraintSet,
    judge: &dyn Judge,
) -> Result<Vec<bool>> {
    set.iter()
        .map(|c| verify_constraint(q, y, c, judge).map(|v| v.satisfied))
        .collect()
}

pub fn ila_from_mask(mask: &[bool]) -> bool {
    mask.iter().all(|&b| b)
}

pub fn cla_from_mask(mask: &[bool]) -> Result<f64> {
    if mask.is_empty() {
        return Err(HirError::EmptyConstraintSet);
    }
    Ok(mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64)
}

/// 1 iff every constraint holds; the empty set gives 1.
pub fn instruction_level_accuracy(
    q: &Instruction,
    y: &[Token],
    set: &ConstraintSet,
    judge: &dyn Judge,
) -> Result<bool> {
    for c in set {
        if !verify_constraint(q, y, c, judge)?.satisfied {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fraction of satisfied constraints. Undefined (an error) for the empty set.
pub fn constraint_level_accuracy(
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

/// The satisfied subset `C'` (original order) together with the mask it came from.
pub fn satisfied_subset(
    q: &Instruction,
    y: &[Token],
    set: &ConstraintSet,
    judge: &dyn Judge,
) -> Result<(ConstraintSet, Vec<bool>)> {
    let mask = evaluate_mask(q, y, set, judge)?;
    Ok((set.subset(&mask)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(8, 6)
    }

    fn c(kind: ConstraintKind) -> Constraint {
        Constraint::new(kind, &vocab()).unwrap()
    }

    fn q_with(set: ConstraintSet) -> Instruction {
        Instruction::new(vec![vocab().content_token(5)], set, &vocab()).unwrap()
    }

    #[test]
    fn hard_rules_match_definitions() {
        let v = vocab();
        let (a, b, cc) = (v.content_token(3), v.content_token(4), v.content_token(5));
        let judge = MockJudge::new(v);
        let q = q_with(ConstraintSet::empty());
        let y = [a, b, cc];
        let check = |kind, y: &[Token]| verify_constraint(&q, y, &c(kind), &judge).unwrap();

        let v1 = check(ConstraintKind::ContainsToken { token: b }, &y);
        assert!(v1.satisfied);
        assert_eq!(v1.source, VerdictSource::Rule);
        assert!(!check(ConstraintKind::LengthExactly { length: 4 }, &y).satisfied);
        assert!(!check(ConstraintKind::ForbidsToken { token: a }, &[a, a]).satisfied);
        assert!(check(ConstraintKind::StartsWithToken { token: a }, &y).satisfied);
        assert!(
            check(
                ConstraintKind::EndsWithToken { token: cc },
                &[a, b, cc, EOS]
            )
            .satisfied
        );
        assert!(check(ConstraintKind::LengthAtMost { length: 3 }, &[a, b, cc, EOS]).satisfied);
        assert!(check(ConstraintKind::LengthAtLeast { length: 3 }, &y).satisfied);
        assert!(
            check(
                ConstraintKind::TokenCountOfExactly { token: a, count: 2 },
                &[a, b, a]
            )
            .satisfied
        );
    }

    #[test]
    fn constraint_validation() {
        let v = vocab();
        assert!(Constraint::new(ConstraintKind::ContainsToken { token: EOS }, &v).is_err());
        assert!(Constraint::new(ConstraintKind::LengthExactly { length: 8 }, &v).is_err());
        assert!(Constraint::new(ConstraintKind::Soft { key: "nope".into() }, &v).is_err());
        let s = c(ConstraintKind::Soft {
            key: "polite-tone".into(),
        });
        assert_eq!(s.surface(), &[v.marker(Marker::Soft), v.number(1).unwrap()]);
        let dup = c(ConstraintKind::LengthAtMost { length: 3 });
        assert!(matches!(
            ConstraintSet::new(vec![dup.clone(), dup]),
            Err(HirError::DuplicateConstraint(_))
        ));
    }

    #[test]
    fn accuracy_metrics() {
        let v = vocab();
        let a = v.content_token(3);
        let set = ConstraintSet::new(vec![
            c(ConstraintKind::ContainsToken { token: a }),
            c(ConstraintKind::LengthAtMost { length: 2 }),
            c(ConstraintKind::LengthAtLeast { length: 1 }),
            c(ConstraintKind::StartsWithToken { token: a }),
            c(ConstraintKind::EndsWithToken { token: a }),
        ])
        .unwrap();
        let q = q_with(set.clone());
        let judge = MockJudge::new(v);
        assert!(instruction_level_accuracy(&q, &[a], &set, &judge).unwrap());
        assert_eq!(
            constraint_level_accuracy(&q, &[a], &set, &judge).unwrap(),
            1.0
        );
        // ends with something else: 4 of 5
        let y = [a, v.content_token(4)];
        assert!(!instruction_level_accuracy(&q, &y, &set, &judge).unwrap());
        assert_eq!(
            constraint_level_accuracy(&q, &y, &set, &judge).unwrap(),
            0.8
        );
        let y = [v.content_token(4); 3];
        assert_eq!(
            constraint_level_accuracy(&q, &y, &set, &judge).unwrap(),
            0.2
        );

        let empty = ConstraintSet::empty();
        assert!(instruction_level_accuracy(&q, &y, &empty, &judge).unwrap());
        assert!(matches!(
            constraint_level_accuracy(&q, &y, &empty, &judge),
            Err(HirError::EmptyConstraintSet)
        ));
    }

    #[test]
    fn satisfied_subset_filters_in_order() {
        let v = vocab();
        let (a, b) = (v.content_token(3), v.content_token(4));
        let set = ConstraintSet::new(vec![
            c(ConstraintKind::ContainsToken { token: a }),
            c(ConstraintKind::ContainsToken { token: b }),
            c(ConstraintKind::LengthAtMost { length: 5 }),
        ])
        .unwrap();
        let q = q_with(set.clone());
        let judge = MockJudge::new(v);
        let (sub, mask) = satisfied_subset(&q, &[a], &set, &judge).unwrap();
        assert_eq!(mask, vec![true, false, true]);
        assert_eq!(sub.ids(), vec![set.ids()[0].clone(), set.ids()[2].clone()]);
        let (sub, _) = satisfied_subset(&q, &[a, b], &set, &judge).unwrap();
        assert_eq!(sub, set);
        let (sub, _) = satisfied_subset(&q, &[v.content_token(0); 6], &set, &judge).unwrap();
        assert!(sub.is_empty());
        assert!(instruction_level_accuracy(&q, &[a], &set.subset(&mask).unwrap(), &judge).unwrap());
    }

    #[test]
    fn mock_judge_contract() {
        let v = vocab();
        let judge = MockJudge::new(v);
        let y = [v.content_token(4), v.content_token(0), EOS];
        assert!(judge.mock_judge("contains-greeting", &y).unwrap());
        assert_eq!(
            judge.mock_judge("contains-greeting", &y).unwrap(),
            judge.mock_judge("contains-greeting", &y).unwrap()
        );
        assert!(!judge.mock_judge("polite-tone", &y).unwrap());
        assert!(matches!(
            judge.mock_judge("sarcasm", &y),
            Err(HirError::UnknownJudgeKey(_))
        ));
        let narrow = MockJudge::with_keys(v, &["polite-tone"]);
        let soft = c(ConstraintKind::Soft {
            key: "contains-greeting".into(),
        });
        let q = q_with(ConstraintSet::empty());
        assert!(matches!(
            verify_constraint(&q, &y, &soft, &narrow),
            Err(HirError::UnknownJudgeKey(_))
        ));
        let v = verify_constraint(&q, &y, &soft, &judge).unwrap();
        assert_eq!(v.source, VerdictSource::MockJudge);
    }

    #[test]
    fn ambiguity_witness() {
        // Two responses with the same CLA but disjoint satisfied subsets.
        let v = vocab();
        let t: Vec<Token> = (0..4).map(|i| v.content_token(i + 2)).collect();
        let set = ConstraintSet::new(
            t.iter()
                .map(|&token| c(ConstraintKind::ContainsToken { token }))
                .collect(),
        )
        .unwrap();
        let q = q_with(set.clone());
        let judge = MockJudge::new(v);
        let y1 = [t[0], t[1]];
        let y2 = [t[2], t[3]];
        let c1 = constraint_level_accuracy(&q, &y1, &set, &judge).unwrap();
        let c2 = constraint_level_accuracy(&q, &y2, &set, &judge).unwrap();
        assert_eq!(c1, 0.5);
        assert_eq!(c1, c2);
        assert_ne!(
            evaluate_mask(&q, &y1, &set, &judge).unwrap(),
            evaluate_mask(&q, &y2, &set, &judge).unwrap()
        );
    }

    #[test]
    fn cached_judge_is_transparent() {
        let v = vocab();
        let judge = CachedJudge::new(MockJudge::new(v));
        let y = [v.content_token(1)];
        let first = judge.judge("polite-tone", &[], &y).unwrap();
        let second = judge.judge("polite-tone", &[], &y).unwrap();
        assert_eq!(first, second);
        assert_eq!(judge.cached(), 1);
    }
}
