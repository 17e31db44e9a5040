//! Factored sequence-to-sequence translation with simultaneous target
//! attribute prediction (case, gender), and the metrics used to check how
//! closely a model's predictions follow the attribute distribution of its
//! training data.

pub mod datagen;
pub mod error;
pub mod experiment;
pub mod factorize;
pub mod infer;
pub mod metrics;
pub mod pipeline;
pub mod seq2seq;
pub mod subword;
pub mod text;

pub use error::{Error, Result};
