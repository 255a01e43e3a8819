//! Fixed-context feedforward next-token model.
//!
//! ```text
//! x      = concat(E[c_1], …, E[c_K])          (K·d)
//! a      = tanh(x W_h + b_h)                   (h)
//! z      = a W_o + b_o                         (V)
//! p(·|c) = softmax(z)
//! ```
//!
//! Forward and backward passes are written out by hand. Decoding only sees
//! the model through [`NextTokenModel`], so other architectures can be
//! dropped in behind the same trait.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::scores::{self, ScoreRule, SmoothingConfig};
use crate::simplex::{self, ProbVector};

pub type TokenId = usize;

/// Left-padding id for short histories.
pub const PAD: TokenId = 0;
/// Sequence separator / end of sequence.
pub const EOS: TokenId = 1;
/// First id assigned to a real symbol.
pub const FIRST_SYMBOL: TokenId = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be >= 2, got {}", self.vocab_size)));
        }
        for (name, v) in [
            ("context", self.context),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Names of the shape fields that differ between two configs.
    pub fn shape_diff(&self, other: &ModelConfig) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.vocab_size != other.vocab_size {
            out.push("vocab_size");
        }
        if self.context != other.context {
            out.push("context");
        }
        if self.embed_dim != other.embed_dim {
            out.push("embed_dim");
        }
        if self.hidden_dim != other.hidden_dim {
            out.push("hidden_dim");
        }
        out
    }

    /// `(name, shape)` of every parameter tensor, in storage order.
    pub fn tensor_shapes(&self) -> [(&'static str, Vec<usize>); 5] {
        let (v, k, d, h) = (self.vocab_size, self.context, self.embed_dim, self.hidden_dim);
        [
            ("embedding", vec![v, d]),
            ("hidden_weight", vec![k * d, h]),
            ("hidden_bias", vec![h]),
            ("output_weight", vec![h, v]),
            ("output_bias", vec![v]),
        ]
    }
}

/// Weights of the model. Also used as the container for gradients and
/// optimizer moments, which share its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    /// `V × d`, row-major.
    pub embedding: Vec<T>,
    /// `(K·d) × h`, row-major.
    pub hidden_weight: Vec<T>,
    pub hidden_bias: Vec<T>,
    /// `h × V`, row-major.
    pub output_weight: Vec<T>,
    pub output_bias: Vec<T>,
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(config: ModelConfig) -> Self {
        let shapes = config.tensor_shapes();
        let n = |i: usize| shapes[i].1.iter().product::<usize>();
        Self {
            config,
            embedding: vec![T::zero(); n(0)],
            hidden_weight: vec![T::zero(); n(1)],
            hidden_bias: vec![T::zero(); n(2)],
            output_weight: vec![T::zero(); n(3)],
            output_bias: vec![T::zero(); n(4)],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn tensors(&self) -> [(&'static str, &[T]); 5] {
        [
            ("embedding", &self.embedding),
            ("hidden_weight", &self.hidden_weight),
            ("hidden_bias", &self.hidden_bias),
            ("output_weight", &self.output_weight),
            ("output_bias", &self.output_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<T>); 5] {
        [
            ("embedding", &mut self.embedding),
            ("hidden_weight", &mut self.hidden_weight),
            ("hidden_bias", &mut self.hidden_bias),
            ("output_weight", &mut self.output_weight),
            ("output_bias", &mut self.output_bias),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of every tensor, in storage order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    fn check_context(&self, context: &[TokenId]) -> Result<()> {
        if context.len() != self.config.context {
            return Err(Error::DimensionMismatch { expected: self.config.context, found: context.len() });
        }
        if let Some(&bad) = context.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn forward_cache(&self, context: &[TokenId]) -> ForwardCache<T> {
        let ModelConfig { vocab_size: v, embed_dim: d, hidden_dim: h, .. } = self.config;
        let mut input = Vec::with_capacity(context.len() * d);
        for &tok in context {
            input.extend_from_slice(&self.embedding[tok * d..(tok + 1) * d]);
        }
        let mut hidden = self.hidden_bias.clone();
        for (i, &x) in input.iter().enumerate() {
            let row = &self.hidden_weight[i * h..(i + 1) * h];
            for (acc, &w) in hidden.iter_mut().zip(row) {
                *acc += x * w;
            }
        }
        for a in &mut hidden {
            *a = a.tanh();
        }
        let mut logits = self.output_bias.clone();
        for (j, &a) in hidden.iter().enumerate() {
            let row = &self.output_weight[j * v..(j + 1) * v];
            for (acc, &w) in logits.iter_mut().zip(row) {
                *acc += a * w;
            }
        }
        ForwardCache { input, hidden, logits }
    }

    /// Logits for an exact-length context.
    pub fn logits(&self, context: &[TokenId]) -> Result<Vec<T>> {
        self.check_context(context)?;
        Ok(self.forward_cache(context).logits)
    }

    /// Accumulates one example's gradient into `grads`. `dlogits` is `∂loss/∂z` for the cached forward pass.
    fn backprop(&self, context: &[TokenId], cache: &ForwardCache<T>, dlogits: &[T], grads: &mut Parameters<T>) {
        let ModelConfig { vocab_size: v, embed_dim: d, hidden_dim: h, .. } = self.config;
        for (g, &dz) in grads.output_bias.iter_mut().zip(dlogits) {
            *g += dz;
        }
        let mut dhidden = vec![T::zero(); h];
        for j in 0..h {
            let a = cache.hidden[j];
            let row = &self.output_weight[j * v..(j + 1) * v];
            let grow = &mut grads.output_weight[j * v..(j + 1) * v];
            let mut acc = T::zero();
            for ((g, &w), &dz) in grow.iter_mut().zip(row).zip(dlogits) {
                *g += a * dz;
                acc += w * dz;
            }
            // tanh' = 1 - a²
            dhidden[j] = acc * (T::one() - a * a);
        }
        for (g, &dh) in grads.hidden_bias.iter_mut().zip(&dhidden) {
            *g += dh;
        }
        for (i, &x) in cache.input.iter().enumerate() {
            let row = &self.hidden_weight[i * h..(i + 1) * h];
            let grow = &mut grads.hidden_weight[i * h..(i + 1) * h];
            let mut acc = T::zero();
            for ((g, &w), &dh) in grow.iter_mut().zip(row).zip(&dhidden) {
                *g += x * dh;
                acc += w * dh;
            }
            let slot = i / d;
            let tok = context[slot];
            grads.embedding[tok * d + i % d] += acc;
        }
    }
}

struct ForwardCache<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
}

/// Weights drawn uniform in `[-s, s]` with `s = 1/sqrt(fan_in)` from a
/// [`SplitMix64`] stream seeded with `cfg.seed`; biases start at zero.
/// The embedding table counts as a one-hot linear layer (`fan_in = V`).
/// Tensors are filled in storage order.
pub fn init_params<T: Scalar>(cfg: &ModelConfig) -> Result<Parameters<T>> {
    cfg.validate()?;
    let mut params = Parameters::zeros(*cfg);
    let mut rng = SplitMix64::new(cfg.seed);
    let fill = |rng: &mut SplitMix64, t: &mut Vec<T>, fan_in: usize| {
        let s = 1.0 / (fan_in as f64).sqrt();
        for v in t.iter_mut() {
            *v = T::lit(rng.uniform(-s, s));
        }
    };
    fill(&mut rng, &mut params.embedding, cfg.vocab_size);
    fill(&mut rng, &mut params.hidden_weight, cfg.context * cfg.embed_dim);
    fill(&mut rng, &mut params.output_weight, cfg.hidden_dim);
    Ok(params)
}

/// `p_θ(·|context)` for a context of exactly `K` ids.
pub fn forward<T: Scalar>(params: &Parameters<T>, context: &[TokenId]) -> Result<ProbVector<T>> {
    let z = params.logits(context)?;
    Ok(ProbVector::from_normalized(simplex::softmax_slice(&z)))
}

/// Anything that can produce a next-token distribution from a history.
pub trait NextTokenModel<T: Scalar> {
    fn vocab_size(&self) -> usize;

    /// Logits for the next token after `history` (any length, including 0).
    fn next_logits(&self, history: &[TokenId]) -> Result<Vec<T>>;

    fn next_distribution(&self, history: &[TokenId]) -> Result<ProbVector<T>> {
        Ok(ProbVector::from_normalized(simplex::softmax_slice(&self.next_logits(history)?)))
    }
}

impl<T: Scalar> NextTokenModel<T> for Parameters<T> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_logits(&self, history: &[TokenId]) -> Result<Vec<T>> {
        self.logits(&context_window(history, self.config.context))
    }
}

/// The last `k` ids of `history`, left-padded with [`PAD`].
pub fn context_window(history: &[TokenId], k: usize) -> Vec<TokenId> {
    let start = history.len().saturating_sub(k);
    let mut out = vec![PAD; k - (history.len() - start)];
    out.extend_from_slice(&history[start..]);
    out
}

/// A token sequence with a per-position loss mask (`false` = prompt,
/// excluded from the loss).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>, loss_mask: Vec<bool>) -> Result<Self> {
        if tokens.len() != loss_mask.len() {
            return Err(Error::DimensionMismatch { expected: tokens.len(), found: loss_mask.len() });
        }
        Ok(Self { tokens, loss_mask })
    }

    /// Every position contributes to the loss.
    pub fn unmasked(tokens: Vec<TokenId>) -> Self {
        let loss_mask = vec![true; tokens.len()];
        Self { tokens, loss_mask }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t >= vocab_size) {
            Some(bad) => Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {vocab_size}"
            ))),
            None => Ok(()),
        }
    }

    /// One `(context, target)` example per unmasked position.
    pub fn examples(&self, k: usize) -> Vec<Example> {
        (0..self.tokens.len())
            .filter(|&t| self.loss_mask[t])
            .map(|t| Example { context: context_window(&self.tokens[..t], k), target: self.tokens[t] })
            .collect()
    }
}

/// A single next-token prediction problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub context: Vec<TokenId>,
    pub target: TokenId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceLoss<T> {
    pub loss: T,
    /// Number of positions that contributed.
    pub scored: usize,
}

impl<T> SequenceLoss<T> {
    /// Set when the mask excluded every position, so the loss is an empty sum.
    pub fn all_masked(&self) -> bool {
        self.scored == 0
    }
}

/// `−Σ_{t: mask[t]} S_variant(p_θ(·|x_<t), x_t)`, the negated sum of
/// token-level scores over unmasked positions.
pub fn sequence_loss<T: Scalar>(
    params: &Parameters<T>,
    seq: &TokenSeq,
    rule: ScoreRule,
    cfg: SmoothingConfig,
) -> Result<SequenceLoss<T>> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(Error::invalid("sequence must be non-empty"));
    }
    seq.check_vocab(params.config.vocab_size)?;
    let examples = seq.examples(params.config.context);
    if examples.is_empty() {
        log::warn!("sequence of length {} has every position masked; loss is 0", seq.len());
    }
    let mut loss = T::zero();
    for ex in &examples {
        let z = params.forward_cache(&ex.context).logits;
        loss += scores::token_loss_and_grad(rule, cfg, &z, ex.target, false).0;
    }
    Ok(SequenceLoss { loss, scored: examples.len() })
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Per-token mean loss.
    pub loss: T,
    pub grads: Parameters<T>,
    pub tokens: usize,
}

/// Loss (per-token mean over all unmasked positions of the batch) and its
/// exact gradient.
pub fn backward<T: Scalar>(
    params: &Parameters<T>,
    batch: &[TokenSeq],
    rule: ScoreRule,
    cfg: SmoothingConfig,
) -> Result<Gradients<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    let k = params.config.context;
    let mut examples = Vec::new();
    for seq in batch {
        seq.check_vocab(params.config.vocab_size)?;
        examples.extend(seq.examples(k));
    }
    backward_examples(params, &examples, rule, cfg)
}

/// [`backward`] on pre-built examples. Examples are reduced sequentially in
/// the given order, so the result is bitwise reproducible.
pub fn backward_examples<T: Scalar>(
    params: &Parameters<T>,
    examples: &[Example],
    rule: ScoreRule,
    cfg: SmoothingConfig,
) -> Result<Gradients<T>> {
    cfg.validate()?;
    let mut grads = params.zeros_like();
    let mut total = T::zero();
    for ex in examples {
        params.check_context(&ex.context)?;
        if ex.target >= params.config.vocab_size {
            return Err(Error::invalid(format!("target id {} out of range", ex.target)));
        }
        let cache = params.forward_cache(&ex.context);
        let (loss, dz) = scores::token_loss_and_grad(rule, cfg, &cache.logits, ex.target, true);
        total += loss;
        params.backprop(&ex.context, &cache, &dz, &mut grads);
    }
    let n = examples.len();
    if n > 0 {
        let scale = T::one() / T::from_usize(n).unwrap();
        for (_, t) in grads.tensors_mut() {
            for g in t.iter_mut() {
                *g *= scale;
            }
        }
        total *= scale;
    }
    Ok(Gradients { loss: total, grads, tokens: n })
}
