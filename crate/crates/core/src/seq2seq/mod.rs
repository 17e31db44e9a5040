//! Factored encoder-decoder: per-stream embeddings summed at the input,
//! one output head per target stream, and time-shifted factor targets.

pub mod batch;
pub mod config;
pub mod model;
pub mod tape;
pub mod train;

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};

pub use batch::{build_batch, shift_right, FactoredBatch, FactoredPair};
pub use config::{ModelConfig, StreamSpec};
pub use model::{param_count, FactoredSeq2Seq, LossReport};
pub use train::{corpus_loss, train, write_curve_csv, CurvePoint, TrainConfig, TrainOutcome};

fn centroid(vectors: &[Array1<f64>]) -> Result<Array1<f64>> {
    let first = vectors.first().ok_or(Error::EmptyGroup)?;
    let mut sum = Array1::zeros(first.len());
    for v in vectors {
        sum += v;
    }
    Ok(sum / vectors.len() as f64)
}

/// Cosine similarity of two group centroids.
pub fn centroid_cosine(group_a: &[Array1<f64>], group_b: &[Array1<f64>]) -> Result<f64> {
    let a = centroid(group_a)?;
    let b = centroid(group_b)?;
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn rows(table: ArrayView2<f64>, ids: &[u32]) -> Vec<Array1<f64>> {
    ids.iter().map(|&i| table.row(i as usize).to_owned()).collect()
}

/// Cosine between the centroids of two sets of target word embeddings.
pub fn embedding_centroid_similarity(model: &FactoredSeq2Seq, group_a: &[u32], group_b: &[u32]) -> Result<f64> {
    let table = model.word_embedding().view();
    let v = table.nrows() as u32;
    if group_a.iter().chain(group_b).any(|&i| i >= v) {
        return Err(Error::Invalid("vocab id out of range".into()));
    }
    centroid_cosine(&rows(table, group_a), &rows(table, group_b))
}
