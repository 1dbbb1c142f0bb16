//! Tiny autoregressive categorical policy with exact log-probabilities and gradients.
//!
//! The next-token distribution is computed from three inputs:
//!
//! * a pooled instruction code `u`: the context is split on the separator token, each segment's
//!   first `segment_len` token embeddings are concatenated and passed through a `tanh` layer,
//!   and the segment codes are summed, so every constraint contributes its own additive term;
//! * the embeddings of the last `window` tokens of `context ⊙ prefix` (zero-padded);
//! * a learned vector for the response position.
//!
//! `h = tanh(Hu·u + Hw·win + pos[t] + b)` and `logits = O·h + Ou·u + c`. All gradients are
//! hand-derived and checked against central finite differences in the tests.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::{Token, EOS, SEP};
use crate::error::{HirError, Result};
use crate::scalar::Scalar;

/// Above this vocabulary size rollouts keep only entropies, not full distributions.
pub const MAX_STORED_VOCAB: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub vocab: usize,
    pub embed: usize,
    pub segment_len: usize,
    pub segment_width: usize,
    pub window: usize,
    pub hidden: usize,
    pub positions: usize,
}

impl Architecture {
    /// Under 500 parameters for `vocab <= 10`; used for finite-difference checks.
    pub fn probe(vocab: usize) -> Self {
        Self {
            vocab,
            embed: 3,
            segment_len: 2,
            segment_width: 4,
            window: 2,
            hidden: 5,
            positions: 6,
        }
    }

    /// Training-sized network.
    pub fn small(vocab: usize) -> Self {
        Self {
            vocab,
            embed: 8,
            segment_len: 3,
            segment_width: 24,
            window: 3,
            hidden: 48,
            positions: 12,
        }
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let seg_in = self.segment_len * self.embed;
        let win_in = self.window * self.embed;
        let emb = take(self.vocab * self.embed);
        let seg_w = take(self.segment_width * seg_in);
        let seg_b = take(self.segment_width);
        let hu = take(self.hidden * self.segment_width);
        let hw = take(self.hidden * win_in);
        let pos = take(self.positions * self.hidden);
        let hb = take(self.hidden);
        let out = take(self.vocab * self.hidden);
        let out_u = take(self.vocab * self.segment_width);
        let ob = take(self.vocab);
        Layout {
            emb,
            seg_w,
            seg_b,
            hu,
            hw,
            pos,
            hb,
            out,
            out_u,
            ob,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            self.vocab,
            self.embed,
            self.segment_len,
            self.segment_width,
            self.window,
            self.hidden,
            self.positions,
        ];
        if fields.contains(&0) || self.vocab < 3 {
            return Err(HirError::ParamFormat(format!(
                "degenerate architecture {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    emb: usize,
    seg_w: usize,
    seg_b: usize,
    hu: usize,
    hw: usize,
    pos: usize,
    hb: usize,
    out: usize,
    out_u: usize,
    ob: usize,
    total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Eos,
    MaxLen,
}

/// One sampled response with everything needed for scoring and importance ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T> {
    pub context: Vec<Token>,
    pub tokens: Vec<Token>,
    /// Log-probability of each sampled token under the generating distribution.
    pub logprobs: Vec<T>,
    /// Entropy (natural log) of each per-step distribution.
    pub entropies: Vec<T>,
    /// Per-step distributions, kept when the vocabulary is small enough.
    pub distributions: Option<Vec<Vec<T>>>,
    pub terminated: Termination,
}

/// Summed per-token entropy of a response. Recomputed from stored distributions when present.
pub fn response_entropy<T: Scalar>(rollout: &Rollout<T>) -> T {
    match &rollout.distributions {
        Some(dists) => dists.iter().map(|p| entropy(p)).sum(),
        None => rollout.entropies.iter().copied().sum(),
    }
}

fn entropy<T: Scalar>(p: &[T]) -> T {
    let mut h = T::zero();
    for &x in p {
        if x > T::zero() {
            h -= x * x.ln();
        }
    }
    h
}

/// One teacher-forced sequence with a weight per response token.
#[derive(Clone, Copy, Debug)]
pub struct WeightedSequence<'a, T> {
    pub context: &'a [Token],
    pub tokens: &'a [Token],
    pub weights: &'a [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy<T> {
    arch: Architecture,
    params: Vec<T>,
}

struct Segment<T> {
    tokens: Vec<Token>,
    code: Vec<T>,
}

struct Encoded<T> {
    segments: Vec<Segment<T>>,
    u: Vec<T>,
}

struct Step<T> {
    window: Vec<Option<Token>>,
    pos: usize,
    h: Vec<T>,
    logits: Vec<T>,
}

fn log_softmax<T: Scalar>(logits: &[T]) -> (Vec<T>, T) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    (logits.iter().map(|&l| (l - lse).exp()).collect(), lse)
}

impl<T: Scalar> Policy<T> {
    /// All weights zero: the uniform policy.
    pub fn zeros(arch: Architecture) -> Self {
        arch.validate().expect("valid architecture");
        Self {
            arch,
            params: vec![T::zero(); arch.param_count()],
        }
    }

    /// Gaussian initialisation scaled by fan-in. The output layers start at zero so the
    /// initial policy is exactly uniform.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(arch);
        let l = arch.layout();
        let mut fill = |start: usize, len: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in &mut p.params[start..start + len] {
                *x = T::lit(normal.sample(rng));
            }
        };
        let e = arch.embed;
        fill(l.emb, arch.vocab * e, 1.0);
        fill(
            l.seg_w,
            arch.segment_width * arch.segment_len * e,
            1.0 / ((arch.segment_len * e) as f64).sqrt(),
        );
        fill(
            l.hu,
            arch.hidden * arch.segment_width,
            1.0 / (arch.segment_width as f64).sqrt(),
        );
        fill(
            l.hw,
            arch.hidden * arch.window * e,
            1.0 / ((arch.window * e) as f64).sqrt(),
        );
        fill(l.pos, arch.positions * arch.hidden, 0.5);
        p
    }

    /// Every parameter drawn from `N(0, scale²)`. Used for test fixtures.
    pub fn random(arch: Architecture, scale: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, scale).expect("positive scale");
        let mut p = Self::zeros(arch);
        for x in &mut p.params {
            *x = T::lit(normal.sample(rng));
        }
        p
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(HirError::ParamFormat(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(HirError::ParamFormat("non-finite parameter".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Logits bias of one token; handy for building degenerate fixtures.
    pub fn set_output_bias(&mut self, token: Token, value: T) {
        let l = self.arch.layout();
        self.params[l.ob + token as usize] = value;
    }

    /// `θ ← θ + lr·g`.
    pub fn ascend(&mut self, grad: &[T], lr: T) {
        for (p, &g) in self.params.iter_mut().zip(grad) {
            *p += lr * g;
        }
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        for &t in tokens {
            if t as usize >= self.arch.vocab {
                return Err(HirError::VocabularyOverflow {
                    token: t,
                    vocab: self.arch.vocab,
                });
            }
        }
        Ok(())
    }

    fn encode(&self, context: &[Token]) -> Encoded<T> {
        let a = &self.arch;
        let l = a.layout();
        let e = a.embed;
        let sw = a.segment_width;
        let mut segments = Vec::new();
        for seg in context.split(|&t| t == SEP).filter(|s| !s.is_empty()) {
            let tokens: Vec<Token> = seg.iter().take(a.segment_len).copied().collect();
            let mut code = self.params[l.seg_b..l.seg_b + sw].to_vec();
            for (j, c) in code.iter_mut().enumerate() {
                let row = l.seg_w + j * a.segment_len * e;
                for (slot, &tok) in tokens.iter().enumerate() {
                    let emb = l.emb + tok as usize * e;
                    for d in 0..e {
                        *c += self.params[row + slot * e + d] * self.params[emb + d];
                    }
                }
                *c = c.tanh();
            }
            segments.push(Segment { tokens, code });
        }
        let mut u = vec![T::zero(); sw];
        for s in &segments {
            for (ui, &ci) in u.iter_mut().zip(&s.code) {
                *ui += ci;
            }
        }
        Encoded { segments, u }
    }

    /// Hidden state and logits for the step that follows `history` (context then prefix);
    /// `t` is the response position.
    fn step(&self, enc: &Encoded<T>, history: &[Token], t: usize) -> Step<T> {
        let a = &self.arch;
        let l = a.layout();
        let e = a.embed;
        let sw = a.segment_width;
        let win_in = a.window * e;
        let window: Vec<Option<Token>> = (0..a.window)
            .map(|i| history.len().checked_sub(i + 1).map(|k| history[k]))
            .collect();
        let pos = t.min(a.positions - 1);
        let mut h = Vec::with_capacity(a.hidden);
        for j in 0..a.hidden {
            let mut acc = self.params[l.hb + j] + self.params[l.pos + pos * a.hidden + j];
            let hu_row = l.hu + j * sw;
            for s in 0..sw {
                acc += self.params[hu_row + s] * enc.u[s];
            }
            let hw_row = l.hw + j * win_in;
            for (slot, tok) in window.iter().enumerate() {
                if let Some(tok) = tok {
                    let emb = l.emb + *tok as usize * e;
                    for d in 0..e {
                        acc += self.params[hw_row + slot * e + d] * self.params[emb + d];
                    }
                }
            }
            h.push(acc.tanh());
        }
        let mut logits = Vec::with_capacity(a.vocab);
        for v in 0..a.vocab {
            let mut acc = self.params[l.ob + v];
            let row = l.out + v * a.hidden;
            for (j, &hj) in h.iter().enumerate() {
                acc += self.params[row + j] * hj;
            }
            let row = l.out_u + v * sw;
            for (s, &us) in enc.u.iter().enumerate() {
                acc += self.params[row + s] * us;
            }
            logits.push(acc);
        }
        Step {
            window,
            pos,
            h,
            logits,
        }
    }

    /// Next-token distribution after `prefix` under `context`, at temperature 1.
    pub fn next_distribution(&self, context: &[Token], prefix: &[Token]) -> Result<Vec<T>> {
        self.check_tokens(context)?;
        self.check_tokens(prefix)?;
        let enc = self.encode(context);
        let mut history = context.to_vec();
        history.extend_from_slice(prefix);
        let step = self.step(&enc, &history, prefix.len());
        Ok(log_softmax(&step.logits).0)
    }

    /// Samples a response at the given temperature, stopping at end of sequence or `max_len`.
    pub fn sample_response(
        &self,
        context: &[Token],
        rng: &mut impl Rng,
        max_len: usize,
        temperature: f64,
    ) -> Rollout<T> {
        assert!(temperature > 0.0, "temperature must be positive");
        let inv_temp = T::lit(1.0 / temperature);
        let keep = self.arch.vocab <= MAX_STORED_VOCAB;
        let enc = self.encode(context);
        let mut history = context.to_vec();
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut entropies = Vec::new();
        let mut distributions = keep.then(Vec::new);
        let mut terminated = Termination::MaxLen;
        while tokens.len() < max_len {
            let step = self.step(&enc, &history, tokens.len());
            let scaled: Vec<T> = step.logits.iter().map(|&x| x * inv_temp).collect();
            let (probs, lse) = log_softmax(&scaled);
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (v, p) in probs.iter().enumerate() {
                acc += p.as_f64();
                if draw < acc {
                    pick = v;
                    break;
                }
            }
            logprobs.push(scaled[pick] - lse);
            entropies.push(entropy(&probs));
            if let Some(d) = distributions.as_mut() {
                d.push(probs);
            }
            tokens.push(pick as Token);
            history.push(pick as Token);
            if pick as Token == EOS {
                terminated = Termination::Eos;
                break;
            }
        }
        Rollout {
            context: context.to_vec(),
            tokens,
            logprobs,
            entropies,
            distributions,
            terminated,
        }
    }

    /// Most likely token at every step.
    pub fn greedy_response(&self, context: &[Token], max_len: usize) -> Vec<Token> {
        let enc = self.encode(context);
        let mut history = context.to_vec();
        let mut tokens = Vec::new();
        while tokens.len() < max_len {
            let step = self.step(&enc, &history, tokens.len());
            let mut best = 0;
            for v in 1..step.logits.len() {
                if step.logits[v] > step.logits[best] {
                    best = v;
                }
            }
            tokens.push(best as Token);
            history.push(best as Token);
            if best as Token == EOS {
                break;
            }
        }
        tokens
    }

    /// Teacher-forced `log π(y_t | context, y_<t)` for every response position.
    pub fn logprob_sequence(&self, context: &[Token], y: &[Token]) -> Result<Vec<T>> {
        self.check_tokens(context)?;
        self.check_tokens(y)?;
        let enc = self.encode(context);
        let mut history = context.to_vec();
        let mut out = Vec::with_capacity(y.len());
        for (t, &tok) in y.iter().enumerate() {
            let step = self.step(&enc, &history, t);
            let (_, lse) = log_softmax(&step.logits);
            out.push(step.logits[tok as usize] - lse);
            history.push(tok);
        }
        Ok(out)
    }

    /// Teacher-forced per-step distributions.
    pub fn distributions(&self, context: &[Token], y: &[Token]) -> Result<Vec<Vec<T>>> {
        self.check_tokens(context)?;
        self.check_tokens(y)?;
        let enc = self.encode(context);
        let mut history = context.to_vec();
        let mut out = Vec::with_capacity(y.len());
        for (t, &tok) in y.iter().enumerate() {
            out.push(log_softmax(&self.step(&enc, &history, t).logits).0);
            history.push(tok);
        }
        Ok(out)
    }

    /// Forward pass over one sequence, then accumulates into `grad` the gradient of
    /// `Σ_t w_t · log π(y_t | …)` where the weights come from `weights_for(logprobs)`.
    /// Returns the log-probabilities.
    pub fn accumulate_weighted<F>(
        &self,
        context: &[Token],
        y: &[Token],
        weights_for: F,
        grad: &mut [T],
    ) -> Result<Vec<T>>
    where
        F: FnOnce(&[T]) -> Vec<T>,
    {
        self.check_tokens(context)?;
        self.check_tokens(y)?;
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let a = &self.arch;
        let l = a.layout();
        let e = a.embed;
        let sw = a.segment_width;
        let win_in = a.window * e;

        let enc = self.encode(context);
        let mut history = context.to_vec();
        let mut steps = Vec::with_capacity(y.len());
        let mut probs = Vec::with_capacity(y.len());
        let mut logprobs = Vec::with_capacity(y.len());
        for (t, &tok) in y.iter().enumerate() {
            let step = self.step(&enc, &history, t);
            let (p, lse) = log_softmax(&step.logits);
            logprobs.push(step.logits[tok as usize] - lse);
            probs.push(p);
            steps.push(step);
            history.push(tok);
        }
        let weights = weights_for(&logprobs);
        assert_eq!(weights.len(), y.len(), "one weight per token");

        let mut g_u = vec![T::zero(); sw];
        let mut g_h = vec![T::zero(); a.hidden];
        let mut g_logits = vec![T::zero(); a.vocab];
        for (t, step) in steps.iter().enumerate() {
            let w = weights[t];
            if w == T::zero() {
                continue;
            }
            for v in 0..a.vocab {
                g_logits[v] = -w * probs[t][v];
            }
            g_logits[y[t] as usize] += w;

            g_h.iter_mut().for_each(|x| *x = T::zero());
            for v in 0..a.vocab {
                let gv = g_logits[v];
                grad[l.ob + v] += gv;
                let row = l.out + v * a.hidden;
                for j in 0..a.hidden {
                    grad[row + j] += gv * step.h[j];
                    g_h[j] += self.params[row + j] * gv;
                }
                let row = l.out_u + v * sw;
                for s in 0..sw {
                    grad[row + s] += gv * enc.u[s];
                    g_u[s] += self.params[row + s] * gv;
                }
            }
            for j in 0..a.hidden {
                let ga = g_h[j] * (T::one() - step.h[j] * step.h[j]);
                grad[l.hb + j] += ga;
                grad[l.pos + step.pos * a.hidden + j] += ga;
                let hu_row = l.hu + j * sw;
                for s in 0..sw {
                    grad[hu_row + s] += ga * enc.u[s];
                    g_u[s] += self.params[hu_row + s] * ga;
                }
                let hw_row = l.hw + j * win_in;
                for (slot, tok) in step.window.iter().enumerate() {
                    if let Some(tok) = tok {
                        let emb = l.emb + *tok as usize * e;
                        for d in 0..e {
                            grad[hw_row + slot * e + d] += ga * self.params[emb + d];
                            grad[emb + d] += ga * self.params[hw_row + slot * e + d];
                        }
                    }
                }
            }
        }

        {
            for seg in &enc.segments {
                for j in 0..sw {
                    let gb = g_u[j] * (T::one() - seg.code[j] * seg.code[j]);
                    if gb == T::zero() {
                        continue;
                    }
                    grad[l.seg_b + j] += gb;
                    let row = l.seg_w + j * a.segment_len * e;
                    for (slot, &tok) in seg.tokens.iter().enumerate() {
                        let emb = l.emb + tok as usize * e;
                        for d in 0..e {
                            grad[row + slot * e + d] += gb * self.params[emb + d];
                            grad[emb + d] += gb * self.params[row + slot * e + d];
                        }
                    }
                }
            }
        }
        Ok(logprobs)
    }

    /// Exact gradient of `Σ_sequences Σ_t w_t log π(y_t | context, y_<t)`, accumulated in
    /// batch order.
    pub fn grad_weighted_logprob(&self, batch: &[WeightedSequence<'_, T>]) -> Result<Vec<T>> {
        let mut grad = vec![T::zero(); self.params.len()];
        for item in batch {
            if item.weights.iter().any(|w| !w.is_finite()) {
                return Err(HirError::Invariant("non-finite token weight".into()));
            }
            let w = item.weights.to_vec();
            self.accumulate_weighted(item.context, item.tokens, move |_| w, &mut grad)?;
        }
        Ok(grad)
    }

    /// Writes the versioned binary parameter file.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.params.len() * T::BYTES);
        buf.extend_from_slice(PARAM_MAGIC);
        buf.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        buf.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        let a = &self.arch;
        for f in [
            a.vocab,
            a.embed,
            a.segment_len,
            a.segment_width,
            a.window,
            a.hidden,
            a.positions,
        ] {
            buf.extend_from_slice(&(f as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params {
            p.write_le(&mut buf);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let bad = |m: &str| HirError::ParamFormat(m.to_string());
        if buf.len() < 52 || &buf[..8] != PARAM_MAGIC {
            return Err(bad("not a parameter file"));
        }
        let word = |i: usize| u32::from_le_bytes(buf[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != PARAM_VERSION {
            return Err(bad("unsupported parameter file version"));
        }
        if word(1) as usize != T::BYTES {
            return Err(bad("scalar width does not match"));
        }
        let arch = Architecture {
            vocab: word(2) as usize,
            embed: word(3) as usize,
            segment_len: word(4) as usize,
            segment_width: word(5) as usize,
            window: word(6) as usize,
            hidden: word(7) as usize,
            positions: word(8) as usize,
        };
        let count = u64::from_le_bytes(buf[44..52].try_into().unwrap()) as usize;
        let body = &buf[52..];
        if body.len() != count * T::BYTES {
            return Err(bad("parameter payload has the wrong length"));
        }
        let params = body.chunks_exact(T::BYTES).map(T::read_le).collect();
        Self::from_params(arch, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

const PARAM_MAGIC: &[u8; 8] = b"HIRPARAM";
const PARAM_VERSION: u32 = 1;
