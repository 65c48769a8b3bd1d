//! Text classification with classical baselines, small transformer encoders
//! and a stacking ensemble that fuses their out-of-fold probabilities.

pub mod classical;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod pretrain;
pub mod prob;
pub mod runner;
pub mod scalar;
pub mod textprep;
pub mod tokenizer;

pub use error::{Error, Result};

/// Double-precision instantiations used by the runner and the CLI.
pub type Transformer = neural::TransformerModel<f64>;
pub type Transformer32 = neural::TransformerModel<f32>;
pub type Classical = classical::ClassicalModel<f64>;
pub type Tfidf = features::TfidfModel<f64>;
pub type Probabilities = prob::ProbMatrix<f64>;
pub type Stack = ensemble::StackedModel<f64>;
