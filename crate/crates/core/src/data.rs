//! Corpus handling: character vocabularies, batching, paired data and a
//! synthetic Markov corpus with known conditionals.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, TokenId, TokenSeq, EOS, FIRST_SYMBOL};
use crate::rng::SplitMix64;
use crate::simplex::ProbVector;

/// Character vocabulary. Ids 0 and 1 are pad and EOS; symbols follow in
/// code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<char>,
    ids: BTreeMap<char, TokenId>,
}

impl Vocab {
    pub fn from_symbols(mut symbols: Vec<char>) -> Result<Self> {
        symbols.sort_unstable();
        symbols.dedup();
        if symbols.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one symbol"));
        }
        let ids = symbols.iter().enumerate().map(|(i, &c)| (c, i + FIRST_SYMBOL)).collect();
        Ok(Self { symbols, ids })
    }

    /// Total number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.symbols.len() + FIRST_SYMBOL
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Option<TokenId> {
        self.ids.get(&c).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<char> {
        id.checked_sub(FIRST_SYMBOL).and_then(|i| self.symbols.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        let mut tokens = Vec::with_capacity(text.len());
        let mut unknown = Vec::new();
        for c in text.chars() {
            match self.id(c) {
                Some(id) => tokens.push(id),
                None if !unknown.contains(&c) => unknown.push(c),
                None => {}
            }
        }
        if !unknown.is_empty() {
            return Err(Error::invalid(format!("symbols not in vocabulary: {unknown:?}")));
        }
        Ok(TokenSeq::unmasked(tokens))
    }

    /// Reserved ids (pad, EOS) decode to nothing.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let mut out = String::with_capacity(tokens.len());
        for &t in tokens {
            if t < FIRST_SYMBOL {
                continue;
            }
            out.push(self.symbol(t).ok_or_else(|| {
                Error::invalid(format!("token id {t} out of range for vocabulary of {}", self.size()))
            })?);
        }
        Ok(out)
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.symbols.iter().collect::<String>().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Vocab::from_symbols(s.chars().collect()).map_err(serde::de::Error::custom)
    }
}

/// One id per distinct character of `text`.
pub fn build_vocab(text: &str) -> Result<Vocab> {
    if text.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from empty text"));
    }
    Vocab::from_symbols(text.chars().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    pub context: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Sliding-window examples over a token stream: every position `t ≥ K` is a
/// target with the `K` preceding tokens as context.
pub fn window_examples(tokens: &[TokenId], context: usize) -> Vec<Example> {
    (context..tokens.len())
        .map(|t| Example { context: tokens[t - context..t].to_vec(), target: tokens[t] })
        .collect()
}

pub fn make_batches(tokens: &[TokenId], cfg: BatchConfig) -> Result<Batcher> {
    if tokens.len() <= cfg.context {
        return Err(Error::invalid(format!(
            "corpus of {} tokens is too short for a context of {}",
            tokens.len(),
            cfg.context
        )));
    }
    Batcher::new(window_examples(tokens, cfg.context), cfg.batch_size, cfg.seed)
}

/// Epoch-wise shuffled batches over a fixed example set. Epoch `e` uses its
/// own derived generator, so any epoch can be reproduced on its own.
#[derive(Debug, Clone)]
pub struct Batcher {
    examples: Vec<Example>,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(examples: Vec<Example>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if examples.is_empty() {
            return Err(Error::invalid("no training examples"));
        }
        Ok(Self { examples, batch_size, seed })
    }

    pub fn num_examples(&self) -> usize {
        self.examples.len()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    fn order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        SplitMix64::derive(self.seed, epoch).shuffle(&mut order);
        order
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<Example>> {
        self.order(epoch)
            .chunks(self.batch_size)
            .map(|c| c.iter().map(|&i| self.examples[i].clone()).collect())
            .collect()
    }

    /// Endless stream of batches, epoch after epoch.
    pub fn stream(&self) -> BatchStream<'_> {
        BatchStream { batcher: self, epoch: 0, order: self.order(0), pos: 0 }
    }
}

pub struct BatchStream<'a> {
    batcher: &'a Batcher,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Iterator for BatchStream<'_> {
    type Item = Vec<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.order = self.batcher.order(self.epoch);
            self.pos = 0;
        }
        let end = (self.pos + self.batcher.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end]
            .iter()
            .map(|&i| self.batcher.examples[i].clone())
            .collect();
        self.pos = end;
        Some(batch)
    }
}

/// First-order Markov chain over `states` symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSpec {
    pub states: usize,
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl MarkovSpec {
    /// Chain with every transition row drawn uniform-then-normalized from
    /// `[0.1, 1)`, uniform initial distribution.
    pub fn random(states: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, 0x6d61_726b);
        let transition = (0..states)
            .map(|_| {
                let row: Vec<f64> = (0..states).map(|_| rng.uniform(0.1, 1.0)).collect();
                let t: f64 = row.iter().sum();
                row.into_iter().map(|v| v / t).collect()
            })
            .collect();
        let initial = vec![1.0 / states as f64; states];
        Self { states, transition, initial, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states < 2 || self.states > 26 {
            return Err(Error::invalid(format!("states must be in 2..=26, got {}", self.states)));
        }
        if self.transition.len() != self.states {
            return Err(Error::DimensionMismatch { expected: self.states, found: self.transition.len() });
        }
        for (s, row) in self.transition.iter().enumerate() {
            if row.len() != self.states {
                return Err(Error::DimensionMismatch { expected: self.states, found: row.len() });
            }
            ProbVector::new(row.clone())
                .map_err(|e| Error::invalid(format!("transition row {s}: {e}")))?;
        }
        if self.initial.len() != self.states {
            return Err(Error::DimensionMismatch { expected: self.states, found: self.initial.len() });
        }
        ProbVector::new(self.initial.clone()).map_err(|e| Error::invalid(format!("initial distribution: {e}")))?;
        Ok(())
    }

    /// Character used for state `s` in rendered corpora (`a`, `b`, …).
    pub fn symbol(s: usize) -> char {
        (b'a' + s as u8) as char
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSample {
    /// Visited states.
    pub states: Vec<usize>,
    /// Token ids of the rendered corpus (state `s` ↦ `FIRST_SYMBOL + s`).
    pub tokens: TokenSeq,
    /// True conditionals `q(next | current)`, one row per state.
    pub conditionals: Vec<Vec<f64>>,
}

impl MarkovSample {
    pub fn text(&self) -> String {
        self.states.iter().map(|&s| MarkovSpec::symbol(s)).collect()
    }

    /// True next-token distribution over a vocabulary of `vocab_size` ids
    /// when the current state is `s`. Reserved ids get probability 0.
    pub fn conditional_over_vocab(&self, s: usize, vocab_size: usize) -> Vec<f64> {
        let mut out = vec![0.0; vocab_size];
        for (j, &q) in self.conditionals[s].iter().enumerate() {
            out[FIRST_SYMBOL + j] = q;
        }
        out
    }
}

pub fn synth_markov(spec: &MarkovSpec, length: usize) -> Result<MarkovSample> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut states = Vec::with_capacity(length);
    if length > 0 {
        let mut s = rng.categorical(&spec.initial);
        states.push(s);
        for _ in 1..length {
            s = rng.categorical(&spec.transition[s]);
            states.push(s);
        }
    }
    let tokens = TokenSeq::unmasked(states.iter().map(|&s| s + FIRST_SYMBOL).collect());
    Ok(MarkovSample { states, tokens, conditionals: spec.transition.clone() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub source: String,
    pub target: String,
}

impl PairRecord {
    /// `source EOS target EOS`, with the loss masked over `source EOS`.
    pub fn to_token_seq(&self, vocab: &Vocab) -> Result<TokenSeq> {
        let src = vocab.encode(&self.source)?.tokens;
        let tgt = vocab.encode(&self.target)?.tokens;
        let prompt_len = src.len() + 1;
        let mut tokens = src;
        tokens.push(EOS);
        tokens.extend(tgt);
        tokens.push(EOS);
        let mask = (0..tokens.len()).map(|i| i >= prompt_len).collect();
        TokenSeq::new(tokens, mask)
    }
}

/// Reads JSON-lines with `"source"` and `"target"` string fields. Blank
/// lines are skipped.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let file = std::fs::File::open(path)?;
    parse_pairs(std::io::BufReader::new(file))
}

pub fn parse_pairs(reader: impl BufRead) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}
