//! Top-k similarity index over chunk vectors.
//!
//! Exact mode scans every stored vector. Approximate mode walks an HNSW
//! graph. Both rank by dot product on normalized vectors and order hits by
//! `(score desc, chunk_id asc)`.

mod hnsw;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::store::{self, Reader, StoreError};
use crate::embed::EmbeddingVector;
use crate::scalar::Scalar;

pub use hnsw::{AnnParams, HnswGraph};

pub const INDEX_MAGIC: &[u8; 4] = b"GRGI";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero vectors")]
    Empty,
    #[error("duplicate chunk id {0}")]
    DuplicateId(String),
    #[error("dimension mismatch for {id}: expected {expected}, got {actual}")]
    DimMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("query dimension {actual} does not match index dimension {expected}")]
    QueryDim { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct VectorIndex<T> {
    dim: usize,
    mode: IndexMode,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector<T>>,
    lookup: HashMap<String, usize>,
    graph: Option<HnswGraph>,
}

impl<T: Scalar> VectorIndex<T> {
    pub fn build(
        pairs: Vec<(String, EmbeddingVector<T>)>,
        mode: IndexMode,
    ) -> Result<Self, IndexError> {
        Self::build_with(pairs, mode, AnnParams::default())
    }

    pub fn build_with(
        pairs: Vec<(String, EmbeddingVector<T>)>,
        mode: IndexMode,
        params: AnnParams,
    ) -> Result<Self, IndexError> {
        let dim = pairs.first().ok_or(IndexError::Empty)?.1.dim();
        let mut ids = Vec::with_capacity(pairs.len());
        let mut vectors = Vec::with_capacity(pairs.len());
        let mut lookup = HashMap::with_capacity(pairs.len());
        for (id, mut v) in pairs {
            if v.dim() != dim {
                return Err(IndexError::DimMismatch {
                    id,
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if lookup.insert(id.clone(), ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            if !v.is_normalized() {
                v.normalize();
            }
            ids.push(id);
            vectors.push(v);
        }
        let graph = match mode {
            IndexMode::Exact => None,
            IndexMode::Approximate => Some(HnswGraph::build(&vectors, params)),
        };
        Ok(Self {
            dim,
            mode,
            ids,
            vectors,
            lookup,
            graph,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, chunk_id: &str) -> Option<&EmbeddingVector<T>> {
        self.lookup.get(chunk_id).map(|&i| &self.vectors[i])
    }

    pub fn graph(&self) -> Option<&HnswGraph> {
        self.graph.as_ref()
    }

    fn order(&self, a: (T, usize), b: (T, usize)) -> Ordering {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
    }

    /// Top `k` hits. `k` larger than the index returns every entry (exact
    /// mode) or everything the graph walk reaches (approximate mode).
    pub fn search(&self, query: &EmbeddingVector<T>, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::QueryDim {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let mut q = query.clone();
        if !q.is_normalized() {
            q.normalize();
        }
        let mut scored: Vec<(T, usize)> = match &self.graph {
            None => self
                .vectors
                .iter()
                .enumerate()
                .map(|(i, v)| (v.dot(&q), i))
                .collect(),
            Some(g) => g
                .search(&self.vectors, q.values(), k)
                .into_iter()
                .map(|s| (s.score, s.idx as usize))
                .collect(),
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, |a, b| self.order(*a, *b));
            scored.truncate(k);
        }
        scored.sort_by(|a, b| self.order(*a, *b));
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (score, i))| SearchHit {
                chunk_id: self.ids[i].clone(),
                score: score.as_f64(),
                rank: r + 1,
            })
            .collect())
    }

    /// Serialize: the vector section, then a `GRGI` index section.
    ///
    /// ```text
    /// magic "GRGI", version u32 = 1, mode u8 (0 exact, 1 approximate)
    /// approximate only:
    ///     m u32, ef_construction u32, ef_search u32, seed u64,
    ///     entry u64 (u64::MAX when absent), max_level u32,
    ///     per node in vector-section order:
    ///         top_level u32, then for each level 0..=top_level:
    ///             n u32, n × neighbor u32
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let refs: Vec<(&str, &EmbeddingVector<T>)> =
            self.ids.iter().map(String::as_str).zip(&self.vectors).collect();
        store::encode_vectors(&mut out, self.dim, &refs);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        match &self.graph {
            None => out.push(0),
            Some(g) => {
                out.push(1);
                for v in [g.params.m, g.params.ef_construction, g.params.ef_search] {
                    out.extend_from_slice(&(v as u32).to_le_bytes());
                }
                out.extend_from_slice(&g.params.seed.to_le_bytes());
                out.extend_from_slice(&g.entry.map_or(u64::MAX, u64::from).to_le_bytes());
                out.extend_from_slice(&(g.max_level as u32).to_le_bytes());
                for levels in &g.layers {
                    out.extend_from_slice(&((levels.len() - 1) as u32).to_le_bytes());
                    for list in levels {
                        out.extend_from_slice(&(list.len() as u32).to_le_bytes());
                        for n in list {
                            out.extend_from_slice(&n.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader::new(bytes);
        let (dim, records) = store::decode_vectors::<T>(&mut r)?;
        r.magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(StoreError::Version {
                expected: INDEX_VERSION,
                found: version,
            }
            .into());
        }
        let mode = r.u8()?;
        let graph = match mode {
            0 => None,
            1 => {
                let params = AnnParams {
                    m: r.u32()? as usize,
                    ef_construction: r.u32()? as usize,
                    ef_search: r.u32()? as usize,
                    seed: r.u64()?,
                };
                let entry = match r.u64()? {
                    u64::MAX => None,
                    e => Some(u32::try_from(e).map_err(|_| StoreError::Corrupt("entry point".into()))?),
                };
                let max_level = r.u32()? as usize;
                let mut layers = Vec::with_capacity(records.len());
                for _ in 0..records.len() {
                    let top = r.u32()? as usize;
                    if top > max_level {
                        return Err(StoreError::Corrupt(format!("node level {top} above max {max_level}")).into());
                    }
                    let mut levels = Vec::with_capacity(top + 1);
                    for _ in 0..=top {
                        let n = r.u32()? as usize;
                        let mut list = Vec::with_capacity(n.min(1024));
                        for _ in 0..n {
                            list.push(r.u32()?);
                        }
                        levels.push(list);
                    }
                    layers.push(levels);
                }
                let g = HnswGraph {
                    params,
                    layers,
                    entry,
                    max_level,
                };
                g.validate(records.len()).map_err(StoreError::Corrupt)?;
                Some(g)
            }
            other => return Err(StoreError::Corrupt(format!("unknown index mode {other}")).into()),
        };
        if !r.is_at_end() {
            return Err(StoreError::Corrupt("trailing bytes after index section".into()).into());
        }
        if records.is_empty() {
            return Err(IndexError::Empty);
        }
        let mut ids = Vec::with_capacity(records.len());
        let mut vectors = Vec::with_capacity(records.len());
        let mut lookup = HashMap::with_capacity(records.len());
        for (id, v) in records {
            if lookup.insert(id.clone(), ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            ids.push(id);
            vectors.push(v);
        }
        Ok(Self {
            dim,
            mode: if graph.is_some() {
                IndexMode::Approximate
            } else {
                IndexMode::Exact
            },
            ids,
            vectors,
            lookup,
            graph,
        })
    }

    /// Vectors are stored as float32, so only `f32` indexes reload with
    /// bit-identical scores.
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        Ok(store::write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&store::read_file(path)?)
    }
}
