//! Command-line front end. Every run is fully determined by its JSON config
//! and flags; the environment is never consulted.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, write_jsonl, Checkpoint};
use crate::data::{build_vocab, load_pairs, synth_markov, MarkovSpec, PairRecord, Vocab};
use crate::decode::{beam_search, greedy, BeamConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TokenSeq};
use crate::scores::{RuleKind, ScoreRule, SmoothingConfig};
use crate::train::{evaluate, finetune, train, Dataset, TrainConfig};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFY_FAIL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "scoring-lm", version, about = "Train and decode compact language models under proper scoring rules")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Continue training an existing checkpoint, possibly under another rule.
    Finetune(FinetuneArgs),
    /// Generate a continuation of a prompt.
    Generate(GenerateArgs),
    /// Held-out scores and perplexity of a checkpoint.
    Eval(EvalArgs),
    /// Run a brute-force certificate.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Write a synthetic Markov corpus.
    Synth(SynthArgs),
}

/// Model section of the config. `vocab_size` is optional because it is
/// normally taken from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub vocab_size: Option<usize>,
    pub context: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { vocab_size: None, context: 4, embed_dim: 16, hidden_dim: 64, seed: 0 }
    }
}

impl ModelSection {
    fn resolve(&self, corpus_vocab: usize) -> Result<ModelConfig> {
        if let Some(v) = self.vocab_size {
            if v != corpus_vocab {
                return Err(Error::ConfigMismatch(format!(
                    "config vocab_size is {v} but the corpus vocabulary has {corpus_vocab} ids"
                )));
            }
        }
        let cfg = ModelConfig {
            vocab_size: corpus_vocab,
            context: self.context,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The single JSON document every subcommand reads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model shape. Optional for `finetune`, which takes it from the base
    /// checkpoint and only checks it when given.
    pub model: Option<ModelSection>,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    /// Plain-text corpus, one character per token.
    pub corpus: Option<PathBuf>,
    /// JSON-lines source/target pairs.
    pub pairs: Option<PathBuf>,
    /// Where `train`/`finetune` write the final checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Where `train`/`finetune` write the metrics log.
    pub metrics: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Scoring rule: log, brier, spherical, alpha_power, pseudo_spherical, linear.
    #[arg(long)]
    rule: Option<RuleKind>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Smoothing factor.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    mask_enhanced: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Seed of the batch order.
    #[arg(long)]
    seed: Option<u64>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output metrics path (JSON-lines).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Seed of the parameter initialization.
    #[arg(long)]
    model_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Checkpoint to start from.
    #[arg(long)]
    base: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "")]
    prompt: String,
    /// Greedy decoding.
    #[arg(long, conflicts_with = "beam")]
    greedy: bool,
    /// Beam search with this beam size.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
    /// Decoding objective: log, brier or spherical.
    #[arg(long)]
    objective: Option<RuleKind>,
    /// Print the ranked hypotheses as JSON instead of the best text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum VerifyCommand {
    /// Expected smoothed scores for m = 100, eps = 0.1.
    Table1,
    /// Grid certificate that a rule is strictly proper.
    Propriety(ScanArgs),
    /// Grid certificate for smoothed and mask-enhanced scores.
    Smoothing(ScanArgs),
    /// Analytic vs finite-difference logit gradients.
    Gradcheck(GradArgs),
    /// Entmax loss vs α-power loss.
    Entmax(EntmaxArgs),
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[arg(long, default_value = "brier")]
    rule: RuleKind,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    /// Smoothing factor (smoothing scan only).
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Distribution to scan, comma separated; repeatable. Defaults to a
    /// vertex, the barycenter and a skewed point.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    q: Vec<f64>,
}

#[derive(Debug, Args)]
struct GradArgs {
    #[arg(long, default_value = "log")]
    rule: RuleKind,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long)]
    mask_enhanced: bool,
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct EntmaxArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.5, 2.0, 2.5])]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Chain description (JSON MarkovSpec); a random chain is drawn otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[arg(long, default_value_t = 100_000)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the chain (including its true transition rows) here.
    #[arg(long)]
    spec_out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::new().filter_level(log::LevelFilter::Info).try_init();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(v) => cmd_verify(v),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_common(cfg: &mut RunConfig, c: &CommonArgs) {
    if let Some(p) = &c.corpus {
        cfg.corpus = Some(p.clone());
        cfg.pairs = None;
    }
    if let Some(p) = &c.pairs {
        cfg.pairs = Some(p.clone());
        cfg.corpus = None;
    }
}

fn apply_train(cfg: &mut RunConfig, f: &TrainFlags) -> Result<()> {
    let t = &mut cfg.train;
    if f.rule.is_some() || f.alpha.is_some() {
        t.rule = ScoreRule::new(f.rule.unwrap_or(t.rule.kind), f.alpha.unwrap_or(t.rule.alpha))?;
    }
    if let Some(e) = f.eps {
        t.smoothing.eps = e;
    }
    if f.mask_enhanced {
        t.smoothing.mask_enhanced = true;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = f.$field { t.$field = v; } )* };
    }
    set!(steps, batch_size, learning_rate, warmup_steps, eval_every, seed);
    if let Some(p) = &f.out {
        cfg.checkpoint = Some(p.clone());
    }
    if let Some(p) = &f.metrics {
        cfg.metrics = Some(p.clone());
    }
    Ok(())
}

fn apply_model(cfg: &mut RunConfig, f: &ModelFlags) {
    let m = cfg.model.get_or_insert_with(ModelSection::default);
    if let Some(v) = f.context {
        m.context = v;
    }
    if let Some(v) = f.embed_dim {
        m.embed_dim = v;
    }
    if let Some(v) = f.hidden_dim {
        m.hidden_dim = v;
    }
    if let Some(v) = f.model_seed {
        m.seed = v;
    }
}

/// Corpus text or pair records, before encoding.
enum RawData {
    Text(String),
    Pairs(Vec<PairRecord>),
}

impl RawData {
    fn load(cfg: &RunConfig) -> Result<Self> {
        match (&cfg.corpus, &cfg.pairs) {
            (Some(_), Some(_)) => Err(Error::Config("set only one of `corpus` and `pairs`".into())),
            (Some(p), None) => Ok(RawData::Text(std::fs::read_to_string(p)?)),
            (None, Some(p)) => Ok(RawData::Pairs(load_pairs(p)?)),
            (None, None) => Err(Error::Config("no data: set `corpus` or `pairs`".into())),
        }
    }

    fn build_vocab(&self) -> Result<Vocab> {
        match self {
            RawData::Text(t) => build_vocab(t),
            RawData::Pairs(ps) => {
                let all: String = ps.iter().flat_map(|p| [p.source.as_str(), p.target.as_str()]).collect();
                build_vocab(&all)
            }
        }
    }

    fn dataset(&self, vocab: &Vocab, context: usize) -> Result<Dataset> {
        let d = match self {
            RawData::Text(t) => Dataset::from_stream(&vocab.encode(t)?.tokens, context)?,
            RawData::Pairs(ps) => {
                let seqs = ps.iter().map(|p| p.to_token_seq(vocab)).collect::<Result<Vec<TokenSeq>>>()?;
                Dataset::from_sequences(&seqs, context)?
            }
        };
        Ok(d.with_vocab(vocab.clone()))
    }
}

fn persist(cfg: &RunConfig, ckpt: &Checkpoint, metrics: &[crate::train::MetricsRecord]) -> Result<()> {
    let ckpt_path = cfg.checkpoint.clone().unwrap_or_else(|| PathBuf::from("checkpoint.json"));
    save_checkpoint(&ckpt_path, ckpt)?;
    if let Some(p) = &cfg.metrics {
        write_jsonl(p, metrics)?;
    }
    if let Some(last) = metrics.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common.config)?;
    apply_common(&mut cfg, &a.common);
    apply_model(&mut cfg, &a.model);
    apply_train(&mut cfg, &a.train)?;
    cfg.train.validate()?;
    let raw = RawData::load(&cfg)?;
    let vocab = raw.build_vocab()?;
    let model = cfg.model.unwrap_or_default().resolve(vocab.size())?;
    let data = raw.dataset(&vocab, model.context)?;
    let out = train(&cfg.train, &model, &data)?;
    persist(&cfg, &out.checkpoint, &out.metrics)?;
    Ok(EXIT_OK)
}

fn cmd_finetune(a: FinetuneArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common.config)?;
    apply_common(&mut cfg, &a.common);
    apply_train(&mut cfg, &a.train)?;
    let base = load_checkpoint(&a.base)?;
    let raw = RawData::load(&cfg)?;
    let vocab = base
        .vocab
        .clone()
        .ok_or_else(|| Error::Config("base checkpoint has no vocabulary".into()))?;
    let model = match cfg.model {
        Some(section) => ModelConfig { seed: base.model.seed, ..section.resolve(base.model.vocab_size)? },
        None => base.model,
    };
    let data = raw.dataset(&vocab, base.model.context)?;
    let out = finetune(&base, &cfg.train, &model, &data)?;
    persist(&cfg, &out.checkpoint, &out.metrics)?;
    Ok(EXIT_OK)
}

fn cmd_generate(a: GenerateArgs) -> Result<i32> {
    let cfg = load_config(&a.config)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut beam = cfg.beam;
    if let Some(b) = a.beam {
        beam.beam_size = b;
    }
    if a.greedy {
        beam.beam_size = 1;
    }
    if let Some(v) = a.max_len {
        beam.max_len = v;
    }
    if let Some(v) = a.length_penalty {
        beam.length_penalty = v;
    }
    if let Some(k) = a.objective {
        beam.objective = ScoreRule::new(k, 2.0)?;
    }
    beam.validate()?;
    let vocab = ckpt.vocab.as_ref().ok_or_else(|| Error::Config("checkpoint has no vocabulary".into()))?;
    let prompt = vocab.encode(&a.prompt)?.tokens;
    let hyps = if a.greedy {
        vec![greedy(&ckpt.params, &prompt, beam.max_len)?]
    } else {
        beam_search(&ckpt.params, &prompt, &beam)?
    };
    if a.json {
        let rows: Vec<serde_json::Value> = hyps
            .iter()
            .map(|h| {
                Ok(serde_json::json!({
                    "text": vocab.decode(h.content())?,
                    "tokens": h.tokens,
                    "raw_score": h.raw_score,
                    "score": h.normalized_score(beam.length_penalty),
                }))
            })
            .collect::<Result<_>>()?;
        println!("{}", serde_json::Value::Array(rows));
    } else {
        println!("{}", vocab.decode(hyps[0].content())?);
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common.config)?;
    apply_common(&mut cfg, &a.common);
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let vocab = ckpt.vocab.clone().ok_or_else(|| Error::Config("checkpoint has no vocabulary".into()))?;
    let data = RawData::load(&cfg)?.dataset(&vocab, ckpt.model.context)?;
    let scores = evaluate(&ckpt.params, &data.heldout)?;
    println!("{}", serde_json::to_string(&scores)?);
    Ok(EXIT_OK)
}

fn verdict(pass: bool) -> i32 {
    println!("{}", if pass { "PASS" } else { "FAIL" });
    if pass {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAIL
    }
}

fn q_set(m: usize, flat: &[f64]) -> Result<Vec<crate::simplex::ProbVector<f64>>> {
    if flat.is_empty() {
        return verify::standard_q_set(m);
    }
    if !flat.len().is_multiple_of(m) {
        return Err(Error::invalid(format!("--q values must come in groups of m = {m}")));
    }
    flat.chunks(m).map(|c| crate::simplex::ProbVector::new(c.to_vec())).collect()
}

fn cmd_verify(v: VerifyCommand) -> Result<i32> {
    match v {
        VerifyCommand::Table1 => {
            let rep = verify::table1_check()?;
            for e in &rep.entries {
                println!(
                    "{:<12} p={:<6} {:>8.4}  (expected {:.4})  {}",
                    e.rule,
                    e.prediction,
                    e.value,
                    e.expected,
                    if e.pass { "ok" } else { "MISMATCH" }
                );
            }
            Ok(verdict(rep.pass))
        }
        VerifyCommand::Propriety(a) => {
            let rule = ScoreRule::new(a.rule, a.alpha)?;
            let rep = verify::propriety_scan(rule, a.m, a.step, &q_set(a.m, &a.q)?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(verdict(rep.pass))
        }
        VerifyCommand::Smoothing(a) => {
            let rule = ScoreRule::new(a.rule, a.alpha)?;
            let rep = verify::smoothing_propriety_scan(rule, a.eps, a.m, a.step, &q_set(a.m, &a.q)?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(verdict(rep.pass))
        }
        VerifyCommand::Gradcheck(a) => {
            let rule = ScoreRule::new(a.rule, a.alpha)?;
            let cfg = SmoothingConfig::new(a.eps, a.mask_enhanced)?;
            let rep = verify::grad_check(rule, cfg, a.m, a.trials, a.h, a.seed)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(verdict(rep.non_finite == 0 && rep.max_rel_error < a.tolerance))
        }
        VerifyCommand::Entmax(a) => {
            let rep = verify::entmax_sweep(&a.alphas, a.trials, a.m, a.seed)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(verdict(rep.pass))
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let spec = match &a.spec {
        Some(p) => {
            let spec: MarkovSpec = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            spec
        }
        None => MarkovSpec::random(a.states, a.seed),
    };
    let sample = synth_markov(&spec, a.length)?;
    match &a.out {
        Some(p) => std::fs::write(p, sample.text())?,
        None => println!("{}", sample.text()),
    }
    if let Some(p) = &a.spec_out {
        std::fs::write(p, serde_json::to_string_pretty(&spec)? + "\n")?;
    }
    Ok(EXIT_OK)
}
