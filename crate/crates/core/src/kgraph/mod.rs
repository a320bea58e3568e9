//! Provenance-tracked knowledge graph: extraction, alignment, assembly,
//! neighborhood queries and file export.

mod align;
mod extract;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Chunk;

pub use align::{align_entities, entity_id, normalize_surface};
pub use extract::{
    extract_triples, EntityMention, Extraction, ExtractorClient, PatternExtractor, RawMention,
    RawTriple, Triple, Unextracted,
};

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no chunks to build a graph from")]
    NoChunks,
    #[error("depth must be 1 or 2, got {0}")]
    Depth(usize),
    #[error("graph schema version {found} is not supported (expected {expected})")]
    SchemaVersion { expected: u32, found: u32 },
    #[error("graph integrity violated: {0}")]
    Integrity(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed graph file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: String,
    pub canonical_name: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub aliases: BTreeSet<String>,
    pub provenance: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subject_id: String,
    pub predicate: String,
    pub object_id: String,
    pub confidence: f64,
    pub provenance: BTreeSet<String>,
}

impl Relation {
    fn key(&self) -> (&str, &str, &str) {
        (&self.subject_id, &self.predicate, &self.object_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Adjacency {
    outgoing: HashMap<String, Vec<usize>>,
    incoming: HashMap<String, Vec<usize>>,
    by_name: HashMap<String, String>,
}

/// Entities keyed by id plus relations sorted by `(subject, predicate, object)`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct KnowledgeGraph {
    entities: BTreeMap<String, Entity>,
    relations: Vec<Relation>,
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    reflexive_predicates: BTreeSet<String>,
    #[serde(skip)]
    adjacency: Adjacency,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.reflexive_predicates == other.reflexive_predicates
    }
}

/// Serialized form.
#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    schema_version: u32,
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    reflexive_predicates: BTreeSet<String>,
}

impl KnowledgeGraph {
    /// Assemble and check integrity. Relations are sorted; adjacency is
    /// derived.
    pub fn from_parts(entities: Vec<Entity>, relations: Vec<Relation>) -> Result<Self, GraphError> {
        Self::with_reflexive(entities, relations, BTreeSet::new())
    }

    /// Like `from_parts`, but self-loops are allowed for the listed
    /// predicates (never for `alias_of`).
    pub fn with_reflexive(
        entities: Vec<Entity>,
        mut relations: Vec<Relation>,
        reflexive_predicates: BTreeSet<String>,
    ) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for e in entities {
            let id = e.entity_id.clone();
            if map.insert(id.clone(), e).is_some() {
                return Err(GraphError::Integrity(format!("duplicate entity id {id}")));
            }
        }
        relations.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut g = Self {
            entities: map,
            relations,
            reflexive_predicates,
            adjacency: Adjacency::default(),
        };
        g.rebuild_adjacency();
        g.check_integrity()?;
        Ok(g)
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = Adjacency::default();
        for (i, r) in self.relations.iter().enumerate() {
            adj.outgoing.entry(r.subject_id.clone()).or_default().push(i);
            adj.incoming.entry(r.object_id.clone()).or_default().push(i);
        }
        for e in self.entities.values() {
            for name in std::iter::once(&e.canonical_name).chain(&e.aliases) {
                adj.by_name
                    .entry(normalize_surface(name))
                    .or_insert_with(|| e.entity_id.clone());
            }
        }
        self.adjacency = adj;
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Resolve a surface form with the alignment normalization.
    pub fn resolve(&self, surface: &str) -> Option<&Entity> {
        self.adjacency
            .by_name
            .get(&normalize_surface(surface))
            .and_then(|id| self.entities.get(id))
    }

    pub fn outgoing(&self, id: &str) -> impl Iterator<Item = &Relation> {
        self.adjacency
            .outgoing
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| &self.relations[i])
    }

    pub fn incoming(&self, id: &str) -> impl Iterator<Item = &Relation> {
        self.adjacency
            .incoming
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| &self.relations[i])
    }

    /// Referential integrity, provenance presence, confidence range, no
    /// self-loops, no duplicate relation keys, adjacency consistency.
    pub fn check_integrity(&self) -> Result<(), GraphError> {
        let fail = |m: String| Err(GraphError::Integrity(m));
        for (id, e) in &self.entities {
            if id != &e.entity_id {
                return fail(format!("entity keyed {id} has id {}", e.entity_id));
            }
            if e.provenance.is_empty() {
                return fail(format!("entity {id} has no provenance"));
            }
            if !e.aliases.contains(&e.canonical_name) {
                return fail(format!("entity {id} canonical name missing from aliases"));
            }
        }
        let mut seen = HashSet::new();
        for r in &self.relations {
            for end in [&r.subject_id, &r.object_id] {
                if !self.entities.contains_key(end) {
                    return fail(format!("relation endpoint {end} does not exist"));
                }
            }
            if r.subject_id == r.object_id && !self.is_reflexive(&r.predicate) {
                return fail(format!("self-loop on {} ({})", r.subject_id, r.predicate));
            }
            if r.provenance.is_empty() {
                return fail(format!("relation {:?} has no provenance", r.key()));
            }
            if !(0.0..=1.0).contains(&r.confidence) {
                return fail(format!("relation {:?} confidence {}", r.key(), r.confidence));
            }
            if !seen.insert(r.key()) {
                return fail(format!("duplicate relation {:?}", r.key()));
            }
        }
        let indexed: usize = self.adjacency.outgoing.values().map(Vec::len).sum();
        let indexed_in: usize = self.adjacency.incoming.values().map(Vec::len).sum();
        if indexed != self.relations.len() || indexed_in != self.relations.len() {
            return fail("adjacency out of sync with relations".into());
        }
        Ok(())
    }

    pub fn is_reflexive(&self, predicate: &str) -> bool {
        predicate != "alias_of" && self.reflexive_predicates.contains(predicate)
    }

    /// Every provenance chunk id exists in `chunk_ids`.
    pub fn check_provenance(&self, chunk_ids: &HashSet<&str>) -> Result<(), GraphError> {
        let entity_prov = self.entities.values().flat_map(|e| &e.provenance);
        let relation_prov = self.relations.iter().flat_map(|r| &r.provenance);
        match entity_prov.chain(relation_prov).find(|c| !chunk_ids.contains(c.as_str())) {
            Some(missing) => Err(GraphError::Integrity(format!("provenance chunk {missing} not in chunk store"))),
            None => Ok(()),
        }
    }

    /// Entities within `depth` undirected hops of any seed, and every
    /// relation whose endpoints are both in that set.
    pub fn neighborhood(&self, seeds: &[String], depth: usize) -> Result<Neighborhood, GraphError> {
        if !(1..=2).contains(&depth) {
            return Err(GraphError::Depth(depth));
        }
        let mut notices = Vec::new();
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        let mut queue = VecDeque::new();
        for s in seeds {
            match self.entities.get_key_value(s.as_str()) {
                Some((id, _)) => {
                    if !dist.contains_key(id.as_str()) {
                        dist.insert(id, 0);
                        queue.push_back(id.as_str());
                    }
                }
                None => notices.push(format!("unknown entity id {s} skipped")),
            }
        }
        if dist.is_empty() && !seeds.is_empty() {
            notices.push("no known seed entities; neighborhood is empty".into());
        }
        while let Some(id) = queue.pop_front() {
            let d = dist[id];
            if d == depth {
                continue;
            }
            let neighbors = self
                .outgoing(id)
                .map(|r| r.object_id.as_str())
                .chain(self.incoming(id).map(|r| r.subject_id.as_str()));
            for n in neighbors {
                if !dist.contains_key(n) {
                    dist.insert(n, d + 1);
                    queue.push_back(n);
                }
            }
        }
        let entities: Vec<Entity> = dist.keys().map(|id| self.entities[*id].clone()).collect();
        let relations: Vec<Relation> = self
            .relations
            .iter()
            .filter(|r| dist.contains_key(r.subject_id.as_str()) && dist.contains_key(r.object_id.as_str()))
            .cloned()
            .collect();
        Ok(Neighborhood {
            graph: Self::with_reflexive(entities, relations, self.reflexive_predicates.clone())?,
            notices,
        })
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            schema_version: GRAPH_SCHEMA_VERSION,
            entities: self.entities.values().cloned().collect(),
            relations: self.relations.clone(),
            reflexive_predicates: self.reflexive_predicates.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
        if v.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::SchemaVersion {
                expected: GRAPH_SCHEMA_VERSION,
                found: v.schema_version,
            });
        }
        let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
        Self::with_reflexive(file.entities, file.relations, file.reflexive_predicates)
    }

    pub fn export(&self, path: &Path) -> Result<(), GraphError> {
        write_text(path, &self.to_json())
    }

    pub fn import(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Cypher-style upsert statements, one per line: all node statements
    /// (by entity id), then all edge statements (by relation key).
    pub fn to_statements(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("string serializes");
        let list = |set: &BTreeSet<String>| {
            format!("[{}]", set.iter().map(|s| q(s)).collect::<Vec<_>>().join(", "))
        };
        let mut out = String::new();
        for e in self.entities.values() {
            out.push_str(&format!(
                "MERGE (n:Entity {{id: {}}}) SET n.name = {}, n.type = {}, n.aliases = {}, n.provenance = {};\n",
                q(&e.entity_id),
                q(&e.canonical_name),
                q(&e.entity_type),
                list(&e.aliases),
                list(&e.provenance),
            ));
        }
        for r in &self.relations {
            out.push_str(&format!(
                "MATCH (a:Entity {{id: {}}}), (b:Entity {{id: {}}}) MERGE (a)-[r:RELATES {{predicate: {}}}]->(b) SET r.confidence = {}, r.provenance = {};\n",
                q(&r.subject_id),
                q(&r.object_id),
                q(&r.predicate),
                serde_json::to_string(&r.confidence).expect("finite"),
                list(&r.provenance),
            ));
        }
        out
    }

    pub fn export_statements(&self, path: &Path) -> Result<(), GraphError> {
        write_text(path, &self.to_statements())
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), GraphError> {
    let io = |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

impl<'de> Deserialize<'de> for KnowledgeGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = GraphFile::deserialize(d)?;
        if file.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported graph schema version {}",
                file.schema_version
            )));
        }
        Self::with_reflexive(file.entities, file.relations, file.reflexive_predicates).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub graph: KnowledgeGraph,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub extractor_attempts: usize,
    /// Predicates allowed to form self-loops. `alias_of` never is.
    pub reflexive_predicates: BTreeSet<String>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            extractor_attempts: 3,
            reflexive_predicates: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BuildReport {
    pub chunks: usize,
    pub triples: usize,
    pub malformed_triples: usize,
    pub self_loops_dropped: usize,
    pub unextracted: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: KnowledgeGraph,
    pub report: BuildReport,
}

/// Extract from every chunk, align mentions, and merge identical triples
/// (union of provenance, max confidence).
pub fn build_graph(
    chunks: &[Chunk],
    extractor: &dyn ExtractorClient,
    options: &BuildOptions,
) -> Result<GraphBuild, GraphError> {
    if chunks.is_empty() {
        return Err(GraphError::NoChunks);
    }
    let results: Vec<Result<Extraction, Unextracted>> = chunks
        .par_iter()
        .map(|c| extract_triples(c, extractor, options.extractor_attempts))
        .collect();

    let mut report = BuildReport {
        chunks: chunks.len(),
        ..Default::default()
    };
    let mut triples = Vec::new();
    for r in results {
        match r {
            Ok(ex) => {
                report.malformed_triples += ex.warnings;
                triples.extend(ex.triples);
            }
            Err(e) => {
                report.warnings.push(e.to_string());
                report.unextracted.push(e.chunk_id);
            }
        }
    }
    report.triples = triples.len();
    if triples.is_empty() {
        report.warnings.push("no triples extracted; graph is empty".into());
        return Ok(GraphBuild {
            graph: KnowledgeGraph::default(),
            report,
        });
    }

    let mentions: Vec<EntityMention> = triples
        .iter()
        .flat_map(|t| [t.subject.clone(), t.object.clone()])
        .collect();
    let (entities, surface_map) = align_entities(&mentions);

    let mut merged: BTreeMap<(String, String, String), Relation> = BTreeMap::new();
    for t in &triples {
        let s = surface_map[&t.subject.surface].clone();
        let o = surface_map[&t.object.surface].clone();
        if s == o && (t.predicate == "alias_of" || !options.reflexive_predicates.contains(&t.predicate)) {
            report.self_loops_dropped += 1;
            continue;
        }
        let rel = merged
            .entry((s.clone(), t.predicate.clone(), o.clone()))
            .or_insert_with(|| Relation {
                subject_id: s,
                predicate: t.predicate.clone(),
                object_id: o,
                confidence: 0.0,
                provenance: BTreeSet::new(),
            });
        rel.confidence = rel.confidence.max(t.confidence);
        rel.provenance.insert(t.subject.chunk_id.clone());
    }
    let graph = KnowledgeGraph::with_reflexive(
        entities,
        merged.into_values().collect(),
        options.reflexive_predicates.clone(),
    )?;
    Ok(GraphBuild { graph, report })
}

#[cfg(test)]
mod tests;
