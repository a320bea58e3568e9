//! Chunking and the embedding contract.
//!
//! Vectors are generic over [`Scalar`]; the engine always L2-normalizes what
//! a backend returns, so similarity in the index reduces to a dot product.

mod chunk;
mod hashed;
pub mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::scalar::Scalar;

pub use chunk::{chunk_document, chunk_spans, chunk_text, reconstruct, Chunk, ChunkPolicy};
pub use hashed::{test_embedder, HashedTrigramEmbedder};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid chunk policy: {0}")]
    Policy(String),
    #[error("embedding backend failed: {0}")]
    Backend(#[from] ClientError),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("invalid embedder: {0}")]
    Contract(String),
}

/// A fixed-dimension embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Contract("zero-dimensional vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Build and L2-normalize. A zero vector stays zero and is not marked
    /// normalized.
    pub fn normalized(values: Vec<T>) -> Result<Self, EmbedError> {
        let mut v = Self::new(values)?;
        v.normalize();
        Ok(v)
    }

    /// The vector used for texts with no content: every component equal to
    /// `1/sqrt(dim)`.
    pub fn empty_sentinel(dim: usize) -> Self {
        let c = T::one() / T::from_usize(dim).expect("dim fits scalar").sqrt();
        Self {
            values: vec![c; dim],
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    pub fn normalize(&mut self) {
        let norm = self.norm();
        if norm.is_zero() {
            return;
        }
        for v in &mut self.values {
            *v /= norm;
        }
        self.normalized = true;
    }

    pub(crate) fn mark_normalized(&mut self) {
        self.normalized = true;
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }

    /// Convert to another scalar type; the normalized flag carries over.
    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self.values.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            normalized: self.normalized,
        }
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// Cosine similarity in `[-1, 1]`. A zero vector has similarity 0 with
/// everything.
pub fn cosine<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na.is_zero() || nb.is_zero() {
        return Ok(T::zero());
    }
    let c = a.dot(b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Text → vector backend.
pub trait Embedder<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Raw, possibly unnormalized, vector of length `dim()`.
    fn embed_raw(&self, text: &str) -> Result<Vec<T>, ClientError>;
    /// Whether concurrent `embed_raw` calls are permitted.
    fn allows_concurrent_calls(&self) -> bool {
        false
    }
}

/// Embed `text` and normalize. Blank text, or a backend that returns an
/// all-zero vector, yields the empty-text sentinel.
pub fn embed_text<T: Scalar>(
    text: &str,
    embedder: &dyn Embedder<T>,
) -> Result<EmbeddingVector<T>, EmbedError> {
    let dim = embedder.dim();
    if text.trim().is_empty() {
        return Ok(EmbeddingVector::empty_sentinel(dim));
    }
    let raw = embedder.embed_raw(text)?;
    if raw.len() != dim {
        return Err(EmbedError::DimMismatch {
            expected: dim,
            actual: raw.len(),
        });
    }
    let v = EmbeddingVector::normalized(raw)?;
    if v.is_zero() {
        return Ok(EmbeddingVector::empty_sentinel(dim));
    }
    Ok(v)
}

/// Embed many texts, in parallel when the backend allows it. Output order
/// follows input order.
pub fn embed_batch<T: Scalar>(
    texts: &[&str],
    embedder: &dyn Embedder<T>,
) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
    use rayon::prelude::*;
    if embedder.allows_concurrent_calls() {
        texts.par_iter().map(|t| embed_text(t, embedder)).collect()
    } else {
        texts.iter().map(|t| embed_text(t, embedder)).collect()
    }
}
