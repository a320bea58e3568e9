//! Hierarchical navigable small-world graph over normalized vectors.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnParams {
    /// Neighbors per node on upper layers; layer 0 keeps twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for AnnParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 128,
            ef_search: 64,
            seed: 0x5EED_1DE5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Scored<T> {
    pub score: T,
    pub idx: u32,
}

impl<T: Scalar> PartialEq for Scored<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Scored<T> {}

impl<T: Scalar> PartialOrd for Scored<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Scored<T> {
    // Higher score is greater; on equal scores the lower index is greater.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .partial_cmp(&other.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HnswGraph {
    pub(crate) params: AnnParams,
    /// `layers[node][level]` = neighbor indices.
    pub(crate) layers: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
    pub(crate) max_level: usize,
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch += 1;
    }

    /// True if newly visited.
    fn visit(&mut self, i: u32) -> bool {
        let slot = &mut self.marks[i as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

fn sim<T: Scalar>(vectors: &[EmbeddingVector<T>], a: &[T], b: u32) -> T {
    crate::embed::dot(a, vectors[b as usize].values())
}

impl HnswGraph {
    pub fn build<T: Scalar>(vectors: &[EmbeddingVector<T>], params: AnnParams) -> Self {
        let mut g = Self {
            params,
            layers: Vec::with_capacity(vectors.len()),
            entry: None,
            max_level: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.m.max(2) as f64).ln();
        let mut visited = Visited::new(vectors.len());
        for i in 0..vectors.len() {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            let level = (-u.ln() * ml).floor() as usize;
            g.insert(vectors, i as u32, level, &mut visited);
        }
        g
    }

    fn max_neighbors(&self, level: usize) -> usize {
        if level == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    fn insert<T: Scalar>(
        &mut self,
        vectors: &[EmbeddingVector<T>],
        idx: u32,
        level: usize,
        visited: &mut Visited,
    ) {
        self.layers.push(vec![Vec::new(); level + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(idx);
            self.max_level = level;
            return;
        };
        let q = vectors[idx as usize].values();
        let mut ep = vec![Scored {
            score: sim(vectors, q, entry),
            idx: entry,
        }];
        for l in ((level + 1)..=self.max_level).rev() {
            ep = self.search_layer(vectors, q, &ep, 1, l, visited);
        }
        for l in (0..=level.min(self.max_level)).rev() {
            let candidates = self.search_layer(vectors, q, &ep, self.params.ef_construction, l, visited);
            let chosen = select_neighbors(vectors, &candidates, self.params.m);
            self.layers[idx as usize][l] = chosen.iter().map(|s| s.idx).collect();
            for s in &chosen {
                self.link(vectors, s.idx, idx, l);
            }
            ep = candidates;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(idx);
        }
    }

    fn link<T: Scalar>(&mut self, vectors: &[EmbeddingVector<T>], from: u32, to: u32, level: usize) {
        let cap = self.max_neighbors(level);
        let list = &mut self.layers[from as usize][level];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = vectors[from as usize].values();
        let mut scored: Vec<Scored<T>> = list
            .iter()
            .map(|&n| Scored {
                score: sim(vectors, base, n),
                idx: n,
            })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        let kept = select_neighbors(vectors, &scored, cap);
        self.layers[from as usize][level] = kept.iter().map(|s| s.idx).collect();
    }

    /// Beam search on one layer. Returns up to `ef` results, best first.
    fn search_layer<T: Scalar>(
        &self,
        vectors: &[EmbeddingVector<T>],
        q: &[T],
        entry: &[Scored<T>],
        ef: usize,
        level: usize,
        visited: &mut Visited,
    ) -> Vec<Scored<T>> {
        visited.reset();
        let mut candidates: BinaryHeap<Scored<T>> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored<T>>> = BinaryHeap::new();
        for e in entry {
            if visited.visit(e.idx) {
                candidates.push(*e);
                results.push(Reverse(*e));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("non-empty").0;
            if c < worst && results.len() >= ef {
                break;
            }
            let Some(neighbors) = self.layers[c.idx as usize].get(level) else {
                continue;
            };
            for &n in neighbors {
                if !visited.visit(n) {
                    continue;
                }
                let s = Scored {
                    score: sim(vectors, q, n),
                    idx: n,
                };
                if results.len() < ef || s > results.peek().expect("non-empty").0 {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored<T>> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate top candidates for `q`, best first, at least `k` beam width.
    pub(crate) fn search<T: Scalar>(
        &self,
        vectors: &[EmbeddingVector<T>],
        q: &[T],
        k: usize,
    ) -> Vec<Scored<T>> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut visited = Visited::new(vectors.len());
        let mut ep = vec![Scored {
            score: sim(vectors, q, entry),
            idx: entry,
        }];
        for l in (1..=self.max_level).rev() {
            ep = self.search_layer(vectors, q, &ep, 1, l, &mut visited);
        }
        self.search_layer(vectors, q, &ep, self.params.ef_search.max(k), 0, &mut visited)
    }

    pub(crate) fn validate(&self, n: usize) -> Result<(), String> {
        if self.layers.len() != n {
            return Err(format!("graph has {} nodes, store has {n}", self.layers.len()));
        }
        match self.entry {
            None if n > 0 => return Err("missing entry point".into()),
            Some(e) if e as usize >= n => return Err(format!("entry point {e} out of range")),
            _ => {}
        }
        for (i, levels) in self.layers.iter().enumerate() {
            for list in levels {
                if let Some(bad) = list.iter().find(|&&x| x as usize >= n) {
                    return Err(format!("node {i} links to out-of-range node {bad}"));
                }
            }
        }
        Ok(())
    }
}

/// Diversity heuristic: walk candidates best-first and keep one only if it
/// is closer to the query than to every neighbor kept so far; top up with
/// the skipped ones if fewer than `m` survive.
fn select_neighbors<T: Scalar>(
    vectors: &[EmbeddingVector<T>],
    candidates: &[Scored<T>],
    m: usize,
) -> Vec<Scored<T>> {
    let mut kept: Vec<Scored<T>> = Vec::with_capacity(m);
    let mut skipped = Vec::new();
    for c in candidates {
        if kept.len() >= m {
            break;
        }
        let cv = vectors[c.idx as usize].values();
        let diverse = kept.iter().all(|k| sim(vectors, cv, k.idx) < c.score);
        if diverse {
            kept.push(*c);
        } else {
            skipped.push(*c);
        }
    }
    for s in skipped {
        if kept.len() >= m {
            break;
        }
        kept.push(s);
    }
    kept
}
