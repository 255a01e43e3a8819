//! Greedy, beam and exhaustive decoding under sign-normalized scoring-rule
//! objectives with a length penalty.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NextTokenModel, TokenId, EOS};
use crate::scalar::Scalar;
use crate::scores::{RuleKind, ScoreRule};
use crate::simplex::{self, ProbVector};

/// Largest `V^max_len` the exhaustive search accepts.
pub const EXHAUSTIVE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    /// Exponent `λ` of the `|y|^λ` divisor in the final ranking.
    pub length_penalty: f64,
    pub objective: ScoreRule,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_size: 4, max_len: 32, length_penalty: 1.0, objective: ScoreRule::logarithmic() }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::Config(format!("length_penalty must be >= 0, got {}", self.length_penalty)));
        }
        check_objective(self.objective)
    }
}

fn check_objective(rule: ScoreRule) -> Result<()> {
    match rule.kind {
        RuleKind::Logarithmic | RuleKind::Brier | RuleKind::Spherical => Ok(()),
        _ => Err(Error::Config(format!(
            "decoding objective must be logarithmic, brier or spherical, got {}",
            rule.label()
        ))),
    }
}

/// A generated continuation. `tokens` excludes the prompt and includes the
/// closing EOS when there is one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis<T> {
    pub tokens: Vec<TokenId>,
    /// Sum of per-step normalized objectives; never positive.
    pub raw_score: T,
    pub finished: bool,
}

impl<T: Scalar> Hypothesis<T> {
    /// `raw_score / |y|^λ`.
    pub fn normalized_score(&self, length_penalty: f64) -> T {
        length_normalize(self.raw_score, self.tokens.len(), length_penalty)
    }

    /// Generated ids without the closing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn length_normalize<T: Scalar>(raw: T, len: usize, lambda: f64) -> T {
    if lambda == 0.0 || len == 0 {
        raw
    } else {
        raw / T::lit((len as f64).powf(lambda))
    }
}

/// Sign-normalized token objective: `log p_i`, `2p_i − Σp² − 1` or
/// `p_i/|p| − 1`. All are at most 0 and increase with `p_i`.
pub fn normalized_objective<T: Scalar>(rule: ScoreRule, p: &ProbVector<T>, i: usize) -> Result<T> {
    check_objective(rule)?;
    if i >= p.len() {
        return Err(Error::IndexOutOfRange { index: i, len: p.len() });
    }
    Ok(objective_row(rule, p.values())[i])
}

fn objective_row<T: Scalar>(rule: ScoreRule, p: &[T]) -> Vec<T> {
    let one = T::one();
    match rule.kind {
        RuleKind::Brier => {
            let sq: T = p.iter().map(|&x| x * x).sum();
            p.iter().map(|&x| (T::lit(2.0) * x - sq - one).min(T::zero())).collect()
        }
        RuleKind::Spherical => {
            let norm = simplex::euclidean_norm(p);
            p.iter().map(|&x| (x / norm - one).min(T::zero())).collect()
        }
        _ => p.iter().map(|&x| x.ln()).collect(),
    }
}

fn check_prompt<T: Scalar, M: NextTokenModel<T>>(model: &M, prompt: &[TokenId]) -> Result<()> {
    let v = model.vocab_size();
    match prompt.iter().find(|&&t| t >= v) {
        Some(&t) => Err(Error::invalid(format!("prompt token {t} out of range for vocab_size {v}"))),
        None => Ok(()),
    }
}

fn history(prompt: &[TokenId], tokens: &[TokenId]) -> Vec<TokenId> {
    let mut h = Vec::with_capacity(prompt.len() + tokens.len());
    h.extend_from_slice(prompt);
    h.extend_from_slice(tokens);
    h
}

/// Appends the most probable next token (lowest id on ties) until EOS or
/// `max_len` tokens. The raw score is the summed log-probability.
pub fn greedy<T: Scalar, M: NextTokenModel<T>>(model: &M, prompt: &[TokenId], max_len: usize) -> Result<Hypothesis<T>> {
    check_prompt(model, prompt)?;
    let mut hyp = Hypothesis { tokens: Vec::new(), raw_score: T::zero(), finished: false };
    while hyp.tokens.len() < max_len {
        let p = model.next_distribution(&history(prompt, &hyp.tokens))?;
        let i = p.argmax();
        hyp.raw_score += p.values()[i].ln();
        hyp.tokens.push(i);
        if i == EOS {
            break;
        }
    }
    hyp.finished = true;
    Ok(hyp)
}

struct Candidate<T> {
    score: T,
    parent: usize,
    token: TokenId,
}

/// Beam search. Each step expands every live hypothesis by every token and
/// ranks the candidates by raw score (ties: lower parent index, then lower
/// token id). A candidate that ends in EOS or reaches `max_len` joins the
/// finished pool if it ranks within the top `beam_size`; the live beam is
/// refilled with the best unfinished candidates. Search stops once the pool
/// holds `beam_size` hypotheses or nothing is left to expand. The best
/// `beam_size` of the pool are returned sorted by `raw / |y|^λ`.
pub fn beam_search<T: Scalar, M: NextTokenModel<T>>(
    model: &M,
    prompt: &[TokenId],
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis<T>>> {
    cfg.validate()?;
    check_prompt(model, prompt)?;
    let k = cfg.beam_size;
    let mut beam = vec![Hypothesis { tokens: Vec::new(), raw_score: T::zero(), finished: false }];
    let mut pool: Vec<Hypothesis<T>> = Vec::new();
    for len in 1..=cfg.max_len {
        let mut cands = Vec::with_capacity(beam.len() * model.vocab_size());
        for (parent, h) in beam.iter().enumerate() {
            let p = model.next_distribution(&history(prompt, &h.tokens))?;
            for (token, s) in objective_row(cfg.objective, p.values()).into_iter().enumerate() {
                cands.push(Candidate { score: h.raw_score + s, parent, token });
            }
        }
        cands.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        let mut next = Vec::with_capacity(k);
        for (rank, c) in cands.into_iter().enumerate() {
            if rank >= k && next.len() >= k {
                break;
            }
            let finished = c.token == EOS || len == cfg.max_len;
            if finished && rank >= k {
                continue;
            }
            if !finished && next.len() >= k {
                continue;
            }
            let mut tokens = beam[c.parent].tokens.clone();
            tokens.push(c.token);
            let h = Hypothesis { tokens, raw_score: c.score, finished };
            if finished {
                pool.push(h);
            } else {
                next.push(h);
            }
        }
        beam = next;
        if pool.len() >= k || beam.is_empty() {
            break;
        }
    }
    if pool.is_empty() {
        return Err(Error::Internal("beam search finished without any hypothesis".into()));
    }
    let lambda = cfg.length_penalty;
    pool.sort_by(|a, b| {
        b.normalized_score(lambda)
            .partial_cmp(&a.normalized_score(lambda))
            .unwrap_or(Ordering::Equal)
    });
    pool.truncate(k);
    Ok(pool)
}

/// Every complete continuation up to `max_len` over `vocab_size` ids: EOS
/// only ever appears last, and a sequence is complete when it ends in EOS or
/// has `max_len` tokens.
pub fn enumerate_sequences(vocab_size: usize, max_len: usize) -> Result<Vec<Vec<TokenId>>> {
    check_space(vocab_size, max_len)?;
    let mut out = Vec::new();
    let mut stack = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        for t in (0..vocab_size).rev() {
            let mut s = prefix.clone();
            s.push(t);
            if t == EOS || s.len() == max_len {
                out.push(s);
            } else {
                stack.push(s);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn check_space(vocab_size: usize, max_len: usize) -> Result<()> {
    let size = (vocab_size as f64).powf(max_len as f64);
    if size > EXHAUSTIVE_BOUND {
        return Err(Error::SearchSpaceTooLarge { size, bound: EXHAUSTIVE_BOUND });
    }
    Ok(())
}

/// Scores every sequence of [`enumerate_sequences`] with the same objective
/// and length penalty as [`beam_search`] and returns the best one (the
/// lexicographically smallest on ties).
pub fn exhaustive_search<T: Scalar, M: NextTokenModel<T>>(
    model: &M,
    prompt: &[TokenId],
    max_len: usize,
    cfg: &BeamConfig,
) -> Result<Hypothesis<T>> {
    BeamConfig { max_len, ..*cfg }.validate()?;
    check_prompt(model, prompt)?;
    check_space(model.vocab_size(), max_len)?;
    let lambda = cfg.length_penalty;
    let mut best: Option<Hypothesis<T>> = None;
    // depth-first over prefixes, one model call per prefix
    let mut stack = vec![(Vec::new(), T::zero())];
    while let Some((prefix, raw)) = stack.pop() {
        let p = model.next_distribution(&history(prompt, &prefix))?;
        let row = objective_row(cfg.objective, p.values());
        for (t, s) in row.into_iter().enumerate().rev() {
            let mut tokens = prefix.clone();
            tokens.push(t);
            let score = raw + s;
            if t == EOS || tokens.len() == max_len {
                let h = Hypothesis { tokens, raw_score: score, finished: true };
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let (x, y) = (h.normalized_score(lambda), b.normalized_score(lambda));
                        x > y || (x == y && h.tokens < b.tokens)
                    }
                };
                if better {
                    best = Some(h);
                }
            } else {
                stack.push((tokens, score));
            }
        }
    }
    best.ok_or_else(|| Error::Internal("exhaustive search produced no sequence".into()))
}
