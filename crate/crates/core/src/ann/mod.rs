//! Approximate nearest-neighbor search over article embeddings.

mod hnsw;
mod persist;

pub use hnsw::{cosine_similarity, HnswConfig, HnswIndex, InsertOutcome};
pub(crate) use hnsw::{dot, normalize, splitmix64};

use crate::error::Result;

/// Recall of `approx` against the exact answer `truth` (fraction of true
/// ids retrieved).
pub fn recall(approx: &[(String, f64)], truth: &[(String, f64)]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = truth
        .iter()
        .filter(|(id, _)| approx.iter().any(|(a, _)| a == id))
        .count();
    hits as f64 / truth.len() as f64
}

/// Mean recall@k of HNSW search against brute force over `queries`.
pub fn mean_recall(index: &HnswIndex, queries: &[Vec<f32>], k: usize) -> Result<f64> {
    let mut total = 0.0;
    for q in queries {
        let a = index.search(q, k)?;
        let t = index.brute_force_search(q, k)?;
        total += recall(&a, &t);
    }
    Ok(total / queries.len().max(1) as f64)
}
