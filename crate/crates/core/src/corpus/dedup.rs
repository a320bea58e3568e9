//! Exact and near-duplicate collapsing over clean documents.

use std::collections::{BTreeMap, HashMap, HashSet};

use fnv::FnvHasher;
use std::hash::Hasher;

use super::{CleanDocument, FilterReport, Stage, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DedupConfig {
    /// Words per shingle.
    pub shingle_words: usize,
    /// Jaccard similarity at or above which two documents are near-duplicates.
    pub jaccard_threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            shingle_words: 8,
            jaccard_threshold: 0.9,
        }
    }
}

/// Hashed `n`-word shingles of `body`. Bodies shorter than `n` words yield a
/// single shingle of the whole word sequence; empty bodies yield none.
pub fn shingles(body: &str, n: usize) -> HashSet<u64> {
    let words: Vec<String> = body.split_whitespace().map(str::to_lowercase).collect();
    let n = n.max(1);
    if words.is_empty() {
        return HashSet::new();
    }
    let hash = |ws: &[String]| {
        let mut h = FnvHasher::default();
        for w in ws {
            h.write(w.as_bytes());
            h.write_u8(0x1f);
        }
        h.finish()
    };
    if words.len() < n {
        return std::iter::once(hash(&words)).collect();
    }
    words.windows(n).map(hash).collect()
}

pub fn jaccard(a: &HashSet<u64>, b: &HashSet<u64>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Collapse exact duplicates (identical body) and near-duplicates (shingle
/// Jaccard at or above the threshold, clustered transitively). Each cluster
/// keeps the member with the lexicographically smallest `doc_id`. Output
/// preserves the input order of the kept documents.
pub fn dedup(docs: Vec<CleanDocument>) -> (Vec<CleanDocument>, FilterReport) {
    dedup_with(docs, &DedupConfig::default())
}

pub fn dedup_with(
    docs: Vec<CleanDocument>,
    config: &DedupConfig,
) -> (Vec<CleanDocument>, FilterReport) {
    let n = docs.len();
    let mut uf = UnionFind::new(n);

    let mut by_body: HashMap<&str, usize> = HashMap::new();
    for (i, d) in docs.iter().enumerate() {
        match by_body.get(d.body.as_str()) {
            Some(&j) => uf.union(i, j),
            None => {
                by_body.insert(&d.body, i);
            }
        }
    }

    let sets: Vec<HashSet<u64>> = docs
        .iter()
        .map(|d| shingles(&d.body, config.shingle_words))
        .collect();

    // Only pairs sharing at least one shingle can reach a positive Jaccard.
    let mut postings: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, set) in sets.iter().enumerate() {
        for h in set {
            postings.entry(*h).or_default().push(i);
        }
    }
    let mut compared: HashSet<(usize, usize)> = HashSet::new();
    for list in postings.values() {
        for (x, &i) in list.iter().enumerate() {
            for &j in &list[x + 1..] {
                let key = (i.min(j), i.max(j));
                if !compared.insert(key) {
                    continue;
                }
                if jaccard(&sets[i], &sets[j]) >= config.jaccard_threshold {
                    uf.union(i, j);
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }

    let mut representative = vec![true; n];
    let mut cluster_of: HashMap<usize, Vec<String>> = HashMap::new();
    let mut clusters = Vec::new();
    for members in groups.values() {
        if members.len() < 2 {
            continue;
        }
        let rep = *members
            .iter()
            .min_by(|a, b| docs[**a].doc_id.cmp(&docs[**b].doc_id))
            .expect("non-empty cluster");
        let mut ids: Vec<String> = members.iter().map(|m| docs[*m].doc_id.clone()).collect();
        ids.sort();
        for m in members {
            representative[*m] = *m == rep;
        }
        cluster_of.insert(rep, ids.clone());
        clusters.push(ids);
    }
    clusters.sort();

    let mut kept = Vec::new();
    for (i, mut doc) in docs.into_iter().enumerate() {
        if !representative[i] {
            continue;
        }
        let detail = match cluster_of.get(&i) {
            Some(ids) => format!("representative of [{}]", ids.join(", ")),
            None => "unique".to_owned(),
        };
        doc.record(TraceEntry::new(Stage::Dedup, "keep", detail));
        kept.push(doc);
    }

    let dropped = n - kept.len();
    let mut report = FilterReport::new(n);
    report.kept_count = kept.len();
    if dropped > 0 {
        report.dropped_by_stage.insert(Stage::Dedup.name().to_owned(), dropped);
    }
    report.duplicate_clusters = clusters;
    (kept, report)
}
