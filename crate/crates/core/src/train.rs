//! Adam training loop, held-out evaluation and fine-tuning.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{window_examples, Batcher, Vocab};
use crate::error::{Error, Result};
use crate::model::{
    backward_examples, forward, init_params, Example, ModelConfig, Parameters, TokenId, TokenSeq, FIRST_SYMBOL,
};
use crate::scores::{RuleKind, ScoreRule, SmoothingConfig};
use crate::simplex;

/// Fraction of the corpus held out for evaluation (taken from the end).
pub const HELDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rule: ScoreRule,
    pub smoothing: SmoothingConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    /// Evaluate every this many steps; 0 evaluates only after the last step.
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rule: ScoreRule::logarithmic(),
            smoothing: SmoothingConfig::NONE,
            steps: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 100,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be > 0".into()));
        }
        self.validate_optimizer()
    }

    fn validate_optimizer(&self) -> Result<()> {
        self.smoothing.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be > 0, got {}", self.adam_eps)));
        }
        Ok(())
    }

    /// Learning rate at 1-based step `t`: linear warmup, then constant.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * t as f64 / self.warmup_steps as f64
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Parameters<f64>,
    pub v: Parameters<f64>,
}

impl AdamState {
    pub fn new(config: ModelConfig) -> Self {
        Self { m: Parameters::zeros(config), v: Parameters::zeros(config) }
    }
}

/// One bias-corrected Adam update at 1-based step `t`. Gradients are checked
/// before anything is modified, so a failed step leaves `params` and `state`
/// untouched.
pub fn adam_step(
    params: &mut Parameters<f64>,
    grads: &Parameters<f64>,
    state: &mut AdamState,
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("adam step index is 1-based"));
    }
    for (src, other) in [(grads, "gradient"), (&state.m, "first moment"), (&state.v, "second moment")] {
        let diff = params.config.shape_diff(&src.config);
        if !diff.is_empty() {
            return Err(Error::ConfigMismatch(format!("{other} shape differs in {}", diff.join(", "))));
        }
    }
    for (name, g) in grads.tensors() {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: name.to_owned() });
        }
    }
    let lr = cfg.lr_at(t);
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let tensors = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, w), (_, g)), (_, m)), (_, v)) in tensors.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            w[i] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Training and held-out examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub heldout: Vec<Example>,
    pub vocab: Option<Vocab>,
}

impl Dataset {
    /// Splits one token stream: the last tenth of the positions are held out.
    /// Held-out contexts may reach back into the training part; held-out
    /// targets never appear as training targets.
    pub fn from_stream(tokens: &[TokenId], context: usize) -> Result<Self> {
        let n = tokens.len();
        let split = n - heldout_len(n);
        if split <= context || split == n {
            return Err(Error::invalid(format!(
                "corpus of {n} tokens is too short to split for a context of {context}"
            )));
        }
        let train = window_examples(&tokens[..split], context);
        let heldout = window_examples(&tokens[split - context..], context);
        Ok(Self { train, heldout, vocab: None })
    }

    /// Splits a list of sequences: the last tenth of the sequences are held out.
    pub fn from_sequences(seqs: &[TokenSeq], context: usize) -> Result<Self> {
        let n = seqs.len();
        let split = n - heldout_len(n);
        if split == 0 || split == n {
            return Err(Error::invalid(format!("{n} sequences are too few to split off a held-out part")));
        }
        let collect = |s: &[TokenSeq]| s.iter().flat_map(|q| q.examples(context)).collect::<Vec<_>>();
        let train = collect(&seqs[..split]);
        let heldout = collect(&seqs[split..]);
        if train.is_empty() || heldout.is_empty() {
            return Err(Error::invalid("every position of a split is masked"));
        }
        Ok(Self { train, heldout, vocab: None })
    }

    pub fn with_vocab(mut self, vocab: Vocab) -> Self {
        self.vocab = Some(vocab);
        self
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        for ex in self.train.iter().chain(&self.heldout) {
            if ex.context.len() != cfg.context {
                return Err(Error::DimensionMismatch { expected: cfg.context, found: ex.context.len() });
            }
            if let Some(&bad) = ex.context.iter().chain([&ex.target]).find(|&&t| t >= cfg.vocab_size) {
                return Err(Error::invalid(format!(
                    "token id {bad} out of range for vocab_size {}",
                    cfg.vocab_size
                )));
            }
        }
        if let Some(v) = &self.vocab {
            if v.size() != cfg.vocab_size {
                return Err(Error::ConfigMismatch(format!(
                    "corpus vocabulary has {} ids, model vocab_size is {}",
                    v.size(),
                    cfg.vocab_size
                )));
            }
        }
        Ok(())
    }
}

fn heldout_len(n: usize) -> usize {
    ((n as f64) * HELDOUT_FRACTION).ceil() as usize
}

/// Mean held-out scores of the model's predictive distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutScores {
    pub score_log: f64,
    pub score_brier: f64,
    pub score_spherical: f64,
    /// `exp(−score_log)`; `None` when not finite.
    pub ppl: Option<f64>,
}

pub fn evaluate(params: &Parameters<f64>, examples: &[Example]) -> Result<HeldoutScores> {
    if examples.is_empty() {
        return Err(Error::invalid("no held-out examples"));
    }
    let (mut log, mut brier, mut sph) = (0.0, 0.0, 0.0);
    for ex in examples {
        let z = params.logits(&ex.context)?;
        let p = simplex::softmax_slice(&z);
        let i = ex.target;
        log += simplex::log_softmax_slice(&z)[i];
        let sq: f64 = p.iter().map(|x| x * x).sum();
        brier += 2.0 * p[i] - sq;
        sph += p[i] / simplex::euclidean_norm(&p);
    }
    let n = examples.len() as f64;
    let score_log = log / n;
    let ppl = (-score_log).exp();
    Ok(HeldoutScores {
        score_log,
        score_brier: brier / n,
        score_spherical: sph / n,
        ppl: ppl.is_finite().then_some(ppl),
    })
}

/// `(s_new − s_old)/|s_old|`: positive means improvement, whatever the sign
/// of the scores.
pub fn relative_change(s_new: f64, s_old: f64) -> Result<f64> {
    if s_old == 0.0 {
        return Err(Error::UndefinedReference);
    }
    Ok((s_new - s_old) / s_old.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// Mean training loss over the steps since the previous record.
    pub loss: f64,
    pub score_log: f64,
    pub score_brier: f64,
    pub score_spherical: f64,
    pub ppl: Option<f64>,
    pub rel_log: Option<f64>,
    pub rel_brier: Option<f64>,
    pub rel_spherical: Option<f64>,
}

impl MetricsRecord {
    fn new(step: u64, loss: f64, s: HeldoutScores, reference: &HeldoutScores) -> Self {
        let rel = |a: f64, b: f64| relative_change(a, b).ok();
        Self {
            step,
            loss,
            score_log: s.score_log,
            score_brier: s.score_brier,
            score_spherical: s.score_spherical,
            ppl: s.ppl,
            rel_log: rel(s.score_log, reference.score_log),
            rel_brier: rel(s.score_brier, reference.score_brier),
            rel_spherical: rel(s.score_spherical, reference.score_spherical),
        }
    }

    pub fn scores(&self) -> HeldoutScores {
        HeldoutScores {
            score_log: self.score_log,
            score_brier: self.score_brier,
            score_spherical: self.score_spherical,
            ppl: self.ppl,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
    /// Held-out scores of the reference parameters the relative changes use.
    pub reference: HeldoutScores,
}

/// Trains freshly initialized parameters. Relative changes are measured
/// against the initialization.
pub fn train(cfg: &TrainConfig, model: &ModelConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    let params = init_params::<f64>(model)?;
    run(cfg, params, 0, data)
}

/// Continues from `base` under `cfg` with a fresh optimizer state. Relative
/// changes are measured against `base`. Zero steps return `base` unchanged.
pub fn finetune(base: &Checkpoint, cfg: &TrainConfig, model: &ModelConfig, data: &Dataset) -> Result<TrainOutcome> {
    let diff = base.model.shape_diff(model);
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(format!("differing fields: {}", diff.join(", "))));
    }
    cfg.validate_optimizer()?;
    run(cfg, base.params.clone(), base.step, data)
}

fn run(cfg: &TrainConfig, mut params: Parameters<f64>, start_step: u64, data: &Dataset) -> Result<TrainOutcome> {
    data.check(&params.config)?;
    if cfg.rule.kind == RuleKind::Linear {
        log::warn!("training with the linear rule, which is not proper");
    }
    let reference = evaluate(&params, &data.heldout)?;
    let batcher = Batcher::new(data.train.clone(), cfg.batch_size, cfg.seed)?;
    let mut state = AdamState::new(params.config);
    let mut metrics = Vec::new();
    let (mut loss_sum, mut loss_steps) = (0.0, 0u64);
    for (t, batch) in (1..=cfg.steps).zip(batcher.stream()) {
        let g = backward_examples(&params, &batch, cfg.rule, cfg.smoothing)?;
        adam_step(&mut params, &g.grads, &mut state, t, cfg)?;
        loss_sum += g.loss;
        loss_steps += 1;
        let due = cfg.eval_every > 0 && t % cfg.eval_every == 0;
        if due || t == cfg.steps {
            let scores = evaluate(&params, &data.heldout)?;
            let rec = MetricsRecord::new(start_step + t, loss_sum / loss_steps as f64, scores, &reference);
            log::info!(
                "step {} loss {:.6} log {:.6} brier {:.6} spherical {:.6}",
                rec.step,
                rec.loss,
                rec.score_log,
                rec.score_brier,
                rec.score_spherical
            );
            metrics.push(rec);
            loss_sum = 0.0;
            loss_steps = 0;
        }
    }
    let checkpoint =
        Checkpoint::new(params, cfg.rule, cfg.smoothing, start_step + cfg.steps).with_vocab(data.vocab.clone());
    Ok(TrainOutcome { checkpoint, metrics, reference })
}

/// Max-norm distance between the model's next-token distributions and the
/// true rows `q(·|s)` of a first-order chain. State `s` is presented as a
/// context of `K` copies of its id; reserved ids have true probability 0.
pub fn calibration_error(params: &Parameters<f64>, conditionals: &[Vec<f64>]) -> Result<f64> {
    let k = params.config.context;
    let mut worst: f64 = 0.0;
    for (s, row) in conditionals.iter().enumerate() {
        let p = forward(params, &vec![FIRST_SYMBOL + s; k])?;
        for (t, &pt) in p.values().iter().enumerate() {
            let truth = t.checked_sub(FIRST_SYMBOL).and_then(|j| row.get(j).copied()).unwrap_or(0.0);
            worst = worst.max((pt - truth).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, synth_markov, MarkovSpec};
    use crate::model::backward_examples;

    fn model_cfg(v: usize) -> ModelConfig {
        ModelConfig { vocab_size: v, context: 1, embed_dim: 4, hidden_dim: 8, seed: 3 }
    }

    fn markov_data(len: usize) -> (Dataset, Vec<Vec<f64>>) {
        let spec = MarkovSpec::random(3, 21);
        let s = synth_markov(&spec, len).unwrap();
        (Dataset::from_stream(&s.tokens.tokens, 1).unwrap(), s.conditionals)
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = init_params::<f64>(&model_cfg(5)).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(p.config);
        let g = p.zeros_like();
        for t in 1..5 {
            adam_step(&mut p, &g, &mut st, t, &TrainConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_warmup_lr() {
        let cfg = TrainConfig { learning_rate: 0.01, warmup_steps: 4, ..Default::default() };
        let mut p = init_params::<f64>(&model_cfg(4)).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        for (i, (_, t)) in g.tensors_mut().into_iter().enumerate() {
            t.iter_mut().for_each(|x| *x = if i % 2 == 0 { 0.3 } else { -2.0 });
        }
        let mut st = AdamState::new(p.config);
        adam_step(&mut p, &g, &mut st, 1, &cfg).unwrap();
        // m̂ = g and v̂ = g², so the step is lr/4 · g/(|g| + eps)
        for (((_, a), (_, b)), (_, gt)) in p.tensors().into_iter().zip(before.tensors()).zip(g.tensors()) {
            for ((&x, &y), &gi) in a.iter().zip(b).zip(gt) {
                let expected = -0.0025 * gi / (gi.abs() + 1e-8);
                assert!((x - y - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = init_params::<f64>(&model_cfg(4)).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.output_weight[3] = f64::NAN;
        let mut st = AdamState::new(p.config);
        let err = adam_step(&mut p, &g, &mut st, 1, &TrainConfig::default()).unwrap_err();
        match err {
            Error::NonFiniteGradient { tensor } => assert_eq!(tensor, "output_weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(st, AdamState::new(p.config));
    }

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig { learning_rate: 1.0, warmup_steps: 10, ..Default::default() };
        assert_eq!(cfg.lr_at(1), 0.1);
        assert_eq!(cfg.lr_at(5), 0.5);
        assert_eq!(cfg.lr_at(10), 1.0);
        assert_eq!(cfg.lr_at(500), 1.0);
        assert_eq!(TrainConfig { warmup_steps: 0, ..cfg }.lr_at(1), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { steps: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { beta2: 1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        let cfg: TrainConfig = serde_json::from_str(r#"{"steps": 5, "rule": {"kind": "brier"}}"#).unwrap();
        assert_eq!(cfg.steps, 5);
        assert_eq!(cfg.rule, ScoreRule::brier());
        assert_eq!(cfg.batch_size, 64);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"stepz": 5}"#).is_err());
    }

    #[test]
    fn relative_change_examples() {
        assert_eq!(relative_change(1.5, 1.5).unwrap(), 0.0);
        assert_eq!(relative_change(-1.0, -2.0).unwrap(), 0.5);
        assert!((relative_change(0.84, 0.8).unwrap() - 0.05).abs() < 1e-12);
        assert!(matches!(relative_change(1.0, 0.0), Err(Error::UndefinedReference)));
    }

    #[test]
    fn split_sizes() {
        let tokens: Vec<TokenId> = (0..100).map(|i| 2 + i % 3).collect();
        let d = Dataset::from_stream(&tokens, 2).unwrap();
        assert_eq!(d.train.len(), 88);
        assert_eq!(d.heldout.len(), 10);
        assert_eq!(d.heldout[0].target, tokens[90]);
        assert_eq!(d.heldout[0].context, tokens[88..90].to_vec());
        assert!(Dataset::from_stream(&tokens[..2], 2).is_err());

        let seqs: Vec<TokenSeq> = (0..20).map(|i| TokenSeq::unmasked(vec![2, 3 + i % 2, 1])).collect();
        let d = Dataset::from_sequences(&seqs, 1).unwrap();
        assert_eq!(d.train.len(), 18 * 3);
        assert_eq!(d.heldout.len(), 2 * 3);
    }

    #[test]
    fn evaluate_uniform_model() {
        let p = Parameters::<f64>::zeros(model_cfg(5));
        let ex = vec![Example { context: vec![2], target: 3 }, Example { context: vec![4], target: 0 }];
        let s = evaluate(&p, &ex).unwrap();
        assert!((s.score_log + 5f64.ln()).abs() < 1e-12);
        assert!((s.score_brier - 0.2).abs() < 1e-12);
        assert!((s.score_spherical - 1.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((s.ppl.unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, _) = markov_data(3000);
        let cfg = TrainConfig { steps: 30, eval_every: 10, batch_size: 16, ..Default::default() };
        let a = train(&cfg, &model_cfg(5), &data).unwrap();
        let b = train(&cfg, &model_cfg(5), &data).unwrap();
        assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
        let ja: Vec<String> = a.metrics.iter().map(|m| serde_json::to_string(m).unwrap()).collect();
        let jb: Vec<String> = b.metrics.iter().map(|m| serde_json::to_string(m).unwrap()).collect();
        assert_eq!(ja, jb);
        assert_eq!(a.metrics.iter().map(|m| m.step).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert_eq!(a.checkpoint.step, 30);
    }

    #[test]
    fn metrics_fields_and_ppl_consistency() {
        let (data, _) = markov_data(2000);
        let cfg = TrainConfig { steps: 25, eval_every: 10, ..Default::default() };
        let out = train(&cfg, &model_cfg(5), &data).unwrap();
        assert_eq!(out.metrics.len(), 3);
        for m in &out.metrics {
            assert!((m.ppl.unwrap() - (-m.score_log).exp()).abs() < 1e-12);
        }
        let v: serde_json::Value = serde_json::to_value(out.metrics[0]).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "loss", "ppl", "rel_brier", "rel_log", "rel_spherical", "score_brier", "score_log",
                "score_spherical", "step"
            ]
        );
    }

    #[test]
    fn steps_zero_rejected_for_train() {
        let (data, _) = markov_data(500);
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        assert!(matches!(train(&cfg, &model_cfg(5), &data), Err(Error::Config(_))));
    }

    #[test]
    fn finetune_zero_steps_is_identity() {
        let (data, _) = markov_data(1000);
        let base = train(&TrainConfig { steps: 5, ..Default::default() }, &model_cfg(5), &data).unwrap();
        let cfg = TrainConfig { steps: 0, rule: ScoreRule::brier(), ..Default::default() };
        let out = finetune(&base.checkpoint, &cfg, &model_cfg(5), &data).unwrap();
        assert_eq!(out.checkpoint.params, base.checkpoint.params);
        assert_eq!(out.checkpoint.step, 5);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn finetune_counts_steps_from_base_and_uses_base_reference() {
        let (data, _) = markov_data(1000);
        let base = train(&TrainConfig { steps: 5, ..Default::default() }, &model_cfg(5), &data).unwrap();
        let cfg = TrainConfig { steps: 4, eval_every: 2, ..Default::default() };
        let out = finetune(&base.checkpoint, &cfg, &model_cfg(5), &data).unwrap();
        assert_eq!(out.metrics.iter().map(|m| m.step).collect::<Vec<_>>(), vec![7, 9]);
        assert_eq!(out.reference, evaluate(&base.checkpoint.params, &data.heldout).unwrap());
    }

    #[test]
    fn finetune_config_mismatch_names_fields() {
        let (data, _) = markov_data(500);
        let base = train(&TrainConfig { steps: 1, ..Default::default() }, &model_cfg(5), &data).unwrap();
        let other = ModelConfig { hidden_dim: 9, embed_dim: 2, ..model_cfg(5) };
        let err = finetune(&base.checkpoint, &TrainConfig::default(), &other, &data).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::ConfigMismatch(_)));
        assert!(msg.contains("hidden_dim") && msg.contains("embed_dim"), "{msg}");
    }

    #[test]
    fn vocab_size_mismatch_rejected() {
        let (data, _) = markov_data(500);
        let data = data.with_vocab(build_vocab("ab").unwrap());
        let cfg = TrainConfig { steps: 1, ..Default::default() };
        assert!(matches!(train(&cfg, &model_cfg(5), &data), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn log_training_calibrates_small_chain() {
        let (data, truth) = markov_data(60_000);
        let cfg = TrainConfig { steps: 600, batch_size: 256, learning_rate: 3e-3, eval_every: 0, ..Default::default() };
        let out = train(&cfg, &model_cfg(5), &data).unwrap();
        let err = calibration_error(&out.checkpoint.params, &truth).unwrap();
        assert!(err < 0.05, "calibration error {err}");
        let first = out.reference.score_log;
        assert!(out.metrics.last().unwrap().score_log > first);
    }

    #[test]
    fn degenerate_corpus_gradient_vanishes() {
        let tokens = vec![2; 400];
        let data = Dataset::from_stream(&tokens, 1).unwrap();
        let cfg =
            TrainConfig { steps: 1500, batch_size: 8, learning_rate: 0.05, warmup_steps: 0, eval_every: 0, ..Default::default() };
        let out = train(&cfg, &model_cfg(4), &data).unwrap();
        let g = backward_examples(&out.checkpoint.params, &data.train, cfg.rule, cfg.smoothing).unwrap();
        let norm = g.grads.flatten().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-4, "gradient norm {norm}");
    }
}
