//! Self-describing JSON checkpoints.
//!
//! Reals are written in shortest round-trip decimal form, so a save/load
//! cycle restores every parameter bit for bit.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::scores::{ScoreRule, SmoothingConfig};

pub const FORMAT_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub rule: ScoreRule,
    pub smoothing: SmoothingConfig,
    pub step: u64,
    /// Character vocabulary the ids refer to, when trained on text.
    pub vocab: Option<Vocab>,
    pub params: Parameters<f64>,
}

impl Checkpoint {
    pub fn new(params: Parameters<f64>, rule: ScoreRule, smoothing: SmoothingConfig, step: u64) -> Self {
        Self { model: params.config, rule, smoothing, step, vocab: None, params }
    }

    pub fn with_vocab(mut self, vocab: Option<Vocab>) -> Self {
        self.vocab = vocab;
        self
    }

    pub fn to_value(&self) -> Value {
        let mut tensors = Map::new();
        for ((name, shape), (_, data)) in self.model.tensor_shapes().into_iter().zip(self.params.tensors()) {
            let v = if shape.len() == 2 {
                Value::Array(data.chunks(shape[1]).map(|row| json!(row)).collect())
            } else {
                json!(data)
            };
            tensors.insert(name.to_owned(), v);
        }
        json!({
            "v": FORMAT_VERSION,
            "model": self.model,
            "rule": self.rule,
            "smoothing": self.smoothing,
            "step": self.step,
            "vocab": self.vocab,
            "params": tensors,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = self.to_value().to_string();
        s.push('\n');
        s
    }

    /// Parses a checkpoint document. The version is checked before anything
    /// else, then every tensor shape against the model config.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::CheckpointMalformed(e.to_string()))?;
        let obj = doc.as_object().ok_or_else(|| malformed("top level is not an object"))?;
        let version = obj
            .get("v")
            .ok_or_else(|| malformed("missing version field `v`"))?
            .as_i64()
            .ok_or_else(|| malformed("version field `v` is not an integer"))?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion { found: version, supported: vec![FORMAT_VERSION] });
        }

        let model: ModelConfig = field(obj, "model")?;
        model.validate().map_err(|e| malformed(&e.to_string()))?;
        let rule: ScoreRule = field(obj, "rule")?;
        let smoothing: SmoothingConfig = field(obj, "smoothing")?;
        smoothing.validate().map_err(|e| malformed(&e.to_string()))?;
        let step: u64 = field(obj, "step")?;
        let vocab: Option<Vocab> = match obj.get("vocab") {
            None | Some(Value::Null) => None,
            Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| malformed(&format!("vocab: {e}")))?),
        };
        if let Some(v) = &vocab {
            if v.size() != model.vocab_size {
                return Err(malformed(&format!(
                    "vocabulary has {} ids but the model expects {}",
                    v.size(),
                    model.vocab_size
                )));
            }
        }

        let tensors = obj
            .get("params")
            .and_then(Value::as_object)
            .ok_or_else(|| malformed("missing `params` object"))?;
        let mut params = Parameters::zeros(model);
        for ((name, expected), (_, slot)) in model.tensor_shapes().into_iter().zip(params.tensors_mut()) {
            let raw = tensors.get(name).ok_or_else(|| malformed(&format!("missing tensor `{name}`")))?;
            let (shape, values) = read_tensor(name, raw, expected.len())?;
            if shape != expected {
                return Err(Error::CheckpointShape { tensor: name.to_owned(), expected, found: shape });
            }
            *slot = values;
        }
        Ok(Self { model, rule, smoothing, step, vocab, params })
    }
}

fn malformed(msg: &str) -> Error {
    Error::CheckpointMalformed(msg.to_owned())
}

fn field<T: serde::de::DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<T> {
    let v = obj.get(key).ok_or_else(|| malformed(&format!("missing field `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| malformed(&format!("field `{key}`: {e}")))
}

fn read_tensor(name: &str, raw: &Value, rank: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let num = |v: &Value| -> Result<f64> {
        let x = v.as_f64().ok_or_else(|| malformed(&format!("tensor `{name}` holds a non-number")))?;
        if !x.is_finite() {
            return Err(malformed(&format!("tensor `{name}` holds a non-finite value")));
        }
        Ok(x)
    };
    let outer = raw.as_array().ok_or_else(|| malformed(&format!("tensor `{name}` is not an array")))?;
    if rank == 1 {
        let values = outer.iter().map(num).collect::<Result<Vec<_>>>()?;
        return Ok((vec![values.len()], values));
    }
    let mut values = Vec::new();
    let mut cols = None;
    for row in outer {
        let row = row.as_array().ok_or_else(|| malformed(&format!("tensor `{name}` row is not an array")))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(malformed(&format!("tensor `{name}` has ragged rows")));
            }
            _ => {}
        }
        for v in row {
            values.push(num(v)?);
        }
    }
    Ok((vec![outer.len(), cols.unwrap_or(0)], values))
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

/// Writes any serializable records as JSON-lines.
pub fn write_jsonl<R: Serialize>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
