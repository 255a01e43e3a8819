pub mod error;
pub mod rng;
pub mod scalar;
pub mod scores;
pub mod simplex;
pub mod model;
pub mod data;
pub mod checkpoint;
pub mod train;
pub mod decode;
pub mod verify;
pub mod cli;

pub use error::{Error, Result};
pub use scores::{RuleKind, ScoreRule, SmoothingConfig};

/// Double-precision instantiations of the generic types.
pub type ProbVec = simplex::ProbVector<f64>;
pub type LogitVec = simplex::Logits<f64>;
pub type Params = model::Parameters<f64>;
pub type Grads = model::Gradients<f64>;
pub type Hyp = decode::Hypothesis<f64>;
