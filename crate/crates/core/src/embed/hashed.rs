use std::hash::Hasher;
use std::marker::PhantomData;

use fnv::FnvHasher;

use super::{EmbedError, Embedder};
use crate::client::ClientError;
use crate::scalar::Scalar;
use crate::text::tokens_lower;

const SEED: u64 = 0x6772_675f_7633_7631;

/// Deterministic reference embedder: lowercase, split on non-alphanumerics,
/// hash each character trigram of `^token$` into one of `dim` buckets with
/// seeded FNV-1a, and count. Normalization happens in the engine.
#[derive(Debug, Clone)]
pub struct HashedTrigramEmbedder<T> {
    dim: usize,
    seed: u64,
    _scalar: PhantomData<fn() -> T>,
}

impl<T: Scalar> HashedTrigramEmbedder<T> {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 16 {
            return Err(EmbedError::Contract(format!("dim must be at least 16, got {dim}")));
        }
        Ok(Self {
            dim,
            seed: SEED,
            _scalar: PhantomData,
        })
    }

    fn bucket(&self, gram: &[char]) -> usize {
        let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ self.seed);
        let mut buf = [0u8; 4];
        for c in gram {
            h.write(c.encode_utf8(&mut buf).as_bytes());
        }
        (h.finish() % self.dim as u64) as usize
    }

    /// Trigram counts as plain integers, for inspection.
    pub fn counts(&self, text: &str) -> Vec<u32> {
        let mut counts = vec![0u32; self.dim];
        for token in tokens_lower(text) {
            let padded: Vec<char> = std::iter::once('^')
                .chain(token.chars())
                .chain(std::iter::once('$'))
                .collect();
            for gram in padded.windows(3) {
                counts[self.bucket(gram)] += 1;
            }
        }
        counts
    }
}

pub fn test_embedder<T: Scalar>(dim: usize) -> Result<HashedTrigramEmbedder<T>, EmbedError> {
    HashedTrigramEmbedder::new(dim)
}

impl<T: Scalar> Embedder<T> for HashedTrigramEmbedder<T> {
    fn name(&self) -> &str {
        "hashed-trigram"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<T>, ClientError> {
        Ok(self
            .counts(text)
            .into_iter()
            .map(|c| T::from_u32(c).expect("count fits scalar"))
            .collect())
    }

    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}
