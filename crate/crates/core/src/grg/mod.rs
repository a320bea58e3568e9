//! Joint local (vector) and global (graph) retrieval, budgeted context
//! assembly, and generation.

mod generate;

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::corpus::CleanDocument;
use crate::embed::{chunk_document, embed_batch, embed_text, Chunk, ChunkPolicy, EmbedError, Embedder};
use crate::kgraph::{build_graph, BuildOptions, BuildReport, ExtractorClient, GraphError, KnowledgeGraph};
use crate::mmio::{self, CaptionerClient, ImageInput, MmioError, OcrClient};
use crate::scalar::Scalar;
use crate::vindex::{IndexError, IndexMode, SearchHit, VectorIndex};

pub use generate::{MockRule, GenerationRequest, GenerationResponse, GeneratorClient, MockGenerator, MOCK_FALLBACK};

pub const MIN_BUDGET_CHARS: usize = 256;
pub const FACTS_HEADER: &str = "Graph facts:";
const BLOCK_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum GrgError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("budget of {0} chars is below the minimum of {MIN_BUDGET_CHARS}")]
    BudgetBelowMinimum(usize),
    #[error("budget of {budget} chars cannot hold a single fact line ({needed} chars)")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("index returned chunk {0} that is not in the chunk store")]
    MissingChunk(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Image(#[from] MmioError),
    #[error("generation failed: {source}")]
    Generation {
        #[source]
        source: ClientError,
        /// The assembled context, so the caller can retry without retrieving
        /// again.
        context: Box<AssembledContext>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Base,
    Rag,
    Grg,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Base, Mode::Rag, Mode::Grg];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Rag => "rag",
            Self::Grg => "grg",
        }
    }

    pub fn uses_local(self) -> bool {
        self != Self::Base
    }

    pub fn uses_global(self) -> bool {
        self == Self::Grg
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(Self::Base),
            "rag" => Ok(Self::Rag),
            "grg" => Ok(Self::Grg),
            other => Err(format!("unknown mode {other:?} (expected base, rag or grg)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Chunks by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkStore {
    chunks: BTreeMap<String, Chunk>,
}

impl ChunkStore {
    pub fn new(chunks: impl IntoIterator<Item = Chunk>) -> Self {
        Self {
            chunks: chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect(),
        }
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunks.get(chunk_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.chunks.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LocalContext {
    pub hits: Vec<SearchHit>,
    pub texts: BTreeMap<String, String>,
}

pub fn retrieve_local<T: Scalar>(
    query: &str,
    embedder: &dyn Embedder<T>,
    index: &VectorIndex<T>,
    chunks: &ChunkStore,
    k: usize,
) -> Result<LocalContext, GrgError> {
    if query.trim().is_empty() {
        return Err(GrgError::EmptyQuery);
    }
    if k == 0 {
        return Err(GrgError::ZeroK);
    }
    let q = embed_text(query, embedder)?;
    let hits = index.search(&q, k)?;
    let mut texts = BTreeMap::new();
    for h in &hits {
        let chunk = chunks.get(&h.chunk_id).ok_or_else(|| GrgError::MissingChunk(h.chunk_id.clone()))?;
        texts.insert(h.chunk_id.clone(), chunk.text.clone());
    }
    Ok(LocalContext { hits, texts })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueryEntities {
    /// Resolved entity ids in order of first mention.
    pub entity_ids: Vec<String>,
    pub notices: Vec<String>,
}

/// Resolve the extractor's query mentions against the graph with the
/// alignment normalization.
pub fn extract_query_entities(query: &str, extractor: &dyn ExtractorClient, graph: &KnowledgeGraph) -> QueryEntities {
    let mut out = QueryEntities::default();
    let mentions = match extractor.mentions(query) {
        Ok(m) => m,
        Err(e) => {
            out.notices.push(format!("query entity extraction failed: {e}"));
            return out;
        }
    };
    let mut seen = BTreeSet::new();
    let mut unresolved = BTreeSet::new();
    for m in &mentions {
        match graph.resolve(&m.surface) {
            Some(e) => {
                if seen.insert(e.entity_id.clone()) {
                    out.entity_ids.push(e.entity_id.clone());
                }
            }
            None => {
                unresolved.insert(m.surface.as_str());
            }
        }
    }
    if !unresolved.is_empty() {
        out.notices.push(format!("{} query mentions not in graph were dropped", unresolved.len()));
    }
    if out.entity_ids.is_empty() {
        out.notices.push("no query entities found in graph".into());
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GlobalContext {
    pub subgraph: KnowledgeGraph,
    pub facts: Vec<String>,
    pub notices: Vec<String>,
}

/// `"A —predicate→ B [source: c1, c2]"` with canonical names.
pub fn render_fact(graph: &KnowledgeGraph, relation: &crate::kgraph::Relation) -> String {
    let name = |id: &str| graph.entity(id).map_or(id, |e| e.canonical_name.as_str()).to_owned();
    let sources: Vec<&str> = relation.provenance.iter().map(String::as_str).collect();
    format!(
        "{} —{}→ {} [source: {}]",
        name(&relation.subject_id),
        relation.predicate,
        name(&relation.object_id),
        sources.join(", ")
    )
}

pub fn retrieve_global(entity_ids: &[String], graph: &KnowledgeGraph, depth: usize) -> Result<GlobalContext, GrgError> {
    if entity_ids.is_empty() {
        return Ok(GlobalContext::default());
    }
    let n = graph.neighborhood(entity_ids, depth)?;
    // relations are kept sorted by (subject id, predicate, object id)
    let facts = n.graph.relations().iter().map(|r| render_fact(&n.graph, r)).collect();
    Ok(GlobalContext {
        subgraph: n.graph,
        facts,
        notices: n.notices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextBlock {
    Facts { lines: Vec<String> },
    Chunk { chunk_id: String, rank: usize, score: f64, text: String },
}

impl ContextBlock {
    pub fn render(&self) -> String {
        match self {
            Self::Facts { lines } => {
                let mut s = FACTS_HEADER.to_owned();
                for l in lines {
                    s.push('\n');
                    s.push_str(l);
                }
                s
            }
            Self::Chunk { chunk_id, text, .. } => format!("[source: {chunk_id}]\n{text}"),
        }
    }

    fn chars(&self) -> usize {
        self.render().chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dropped {
    Chunk { chunk_id: String, rank: usize, chars: usize },
    Fact { fact: String, chars: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssembledContext {
    pub blocks: Vec<ContextBlock>,
    pub total_chars: usize,
    pub budget_chars: usize,
    pub truncation_report: Vec<Dropped>,
}

impl AssembledContext {
    /// Blocks joined by a blank line; `total_chars` is its char count.
    pub fn render(&self) -> String {
        self.blocks.iter().map(ContextBlock::render).collect::<Vec<_>>().join(BLOCK_SEPARATOR)
    }

    pub fn facts(&self) -> &[String] {
        self.blocks
            .iter()
            .find_map(|b| match b {
                ContextBlock::Facts { lines } => Some(lines.as_slice()),
                ContextBlock::Chunk { .. } => None,
            })
            .unwrap_or(&[])
    }

    pub fn chunk_ids(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                ContextBlock::Chunk { chunk_id, .. } => Some(chunk_id.as_str()),
                ContextBlock::Facts { .. } => None,
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

fn total_chars(blocks: &[ContextBlock]) -> usize {
    let sep = BLOCK_SEPARATOR.chars().count();
    blocks.iter().map(ContextBlock::chars).sum::<usize>() + sep * blocks.len().saturating_sub(1)
}

/// Facts block (if any) then chunks by rank, or chunks first when
/// `facts_first` is false. Over budget: drop chunks from the lowest rank up,
/// then fact lines from the end.
pub fn assemble_context(
    local: &LocalContext,
    global: &GlobalContext,
    budget_chars: usize,
    facts_first: bool,
) -> Result<AssembledContext, GrgError> {
    if budget_chars < MIN_BUDGET_CHARS {
        return Err(GrgError::BudgetBelowMinimum(budget_chars));
    }
    let mut hits: Vec<&SearchHit> = local.hits.iter().collect();
    hits.sort_by_key(|h| h.rank);
    let mut chunks: Vec<ContextBlock> = hits
        .iter()
        .map(|h| ContextBlock::Chunk {
            chunk_id: h.chunk_id.clone(),
            rank: h.rank,
            score: h.score,
            text: local.texts.get(&h.chunk_id).cloned().unwrap_or_default(),
        })
        .collect();
    let mut lines = global.facts.clone();
    let mut report = Vec::new();

    let layout = |lines: &[String], chunks: &[ContextBlock]| {
        let facts = (!lines.is_empty()).then(|| ContextBlock::Facts { lines: lines.to_vec() });
        let mut blocks = Vec::with_capacity(chunks.len() + 1);
        if facts_first {
            blocks.extend(facts.clone());
            blocks.extend(chunks.iter().cloned());
        } else {
            blocks.extend(chunks.iter().cloned());
            blocks.extend(facts);
        }
        blocks
    };

    while total_chars(&layout(&lines, &chunks)) > budget_chars {
        if let Some(last) = chunks.pop() {
            if let ContextBlock::Chunk { chunk_id, rank, .. } = &last {
                report.push(Dropped::Chunk {
                    chunk_id: chunk_id.clone(),
                    rank: *rank,
                    chars: last.chars(),
                });
            }
        } else if lines.len() > 1 {
            let fact = lines.pop().expect("more than one line");
            report.push(Dropped::Fact {
                chars: fact.chars().count(),
                fact,
            });
        } else {
            return Err(GrgError::BudgetTooSmall {
                budget: budget_chars,
                needed: total_chars(&layout(&lines, &chunks)),
            });
        }
    }
    let blocks = layout(&lines, &chunks);
    Ok(AssembledContext {
        total_chars: total_chars(&blocks),
        blocks,
        budget_chars,
        truncation_report: report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub k: usize,
    pub depth: usize,
    pub budget_chars: usize,
    pub facts_first: bool,
    pub ocr_threshold: f64,
    pub system_preamble: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: 8,
            depth: 1,
            budget_chars: 6000,
            facts_first: true,
            ocr_threshold: mmio::DEFAULT_OCR_THRESHOLD,
            system_preamble: "Answer the question about communication technology using the context when it is relevant.".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    #[serde(default)]
    pub images: Vec<ImageInput>,
}

impl Query {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            images: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mode: Mode,
    pub fused_query: String,
    pub query_entities: Vec<String>,
    pub local_hits: usize,
    pub facts: usize,
    pub notices: Vec<String>,
    pub generator: String,
    pub usage: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub answer: String,
    pub context: AssembledContext,
    pub diagnostics: Diagnostics,
}

/// Loaded stores plus backends. Every field is an immutable snapshot, so
/// `answer` can run concurrently.
pub struct Engine<T: Scalar> {
    pub embedder: Arc<dyn Embedder<T>>,
    pub index: Arc<VectorIndex<T>>,
    pub chunks: Arc<ChunkStore>,
    pub graph: Arc<KnowledgeGraph>,
    pub extractor: Arc<dyn ExtractorClient>,
    pub generator: Arc<dyn GeneratorClient>,
    pub captioner: Option<Arc<dyn CaptionerClient>>,
    pub ocr: Option<Arc<dyn OcrClient<T>>>,
    pub config: EngineConfig,
}

impl<T: Scalar> Engine<T> {
    /// Fuse images into the query text, retrieve for the mode, assemble and
    /// generate.
    pub fn answer(&self, query: &Query, mode: Mode) -> Result<Answer, GrgError> {
        let mut notices = Vec::new();
        let (captions, tokens) = if query.images.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let threshold = T::from_f64_lossy(self.config.ocr_threshold);
            let mut captions = Vec::new();
            let mut tokens = Vec::new();
            for img in &query.images {
                match &self.captioner {
                    Some(c) => match mmio::caption_image(img, c.as_ref()) {
                        Ok(cap) => captions.push(cap),
                        Err(e) => notices.push(format!("caption skipped: {e}")),
                    },
                    None => notices.push(format!("no captioner configured; image {} not captioned", img.image_id)),
                }
                match &self.ocr {
                    Some(o) => match mmio::ocr_image(img, o.as_ref()) {
                        Ok(t) => tokens.extend(mmio::filter_by_confidence(&t, threshold)?),
                        Err(e) => notices.push(format!("ocr skipped: {e}")),
                    },
                    None => notices.push(format!("no ocr reader configured; image {} not read", img.image_id)),
                }
            }
            (captions, tokens)
        };
        let fused = mmio::fuse_query(&query.text, &captions, &tokens).map_err(|e| match e {
            MmioError::EmptyQuery => GrgError::EmptyQuery,
            other => GrgError::Image(other),
        })?;

        let cfg = &self.config;
        let (local, global) = rayon::join(
            || -> Result<LocalContext, GrgError> {
                if mode.uses_local() {
                    retrieve_local(&fused, self.embedder.as_ref(), &self.index, &self.chunks, cfg.k)
                } else {
                    Ok(LocalContext::default())
                }
            },
            || -> Result<(QueryEntities, GlobalContext), GrgError> {
                if mode.uses_global() {
                    let ents = extract_query_entities(&fused, self.extractor.as_ref(), &self.graph);
                    let global = retrieve_global(&ents.entity_ids, &self.graph, cfg.depth)?;
                    Ok((ents, global))
                } else {
                    Ok(Default::default())
                }
            },
        );
        let local = local?;
        let (entities, global) = global?;
        notices.extend(entities.notices.iter().cloned());
        notices.extend(global.notices.iter().cloned());

        let context = if mode == Mode::Base {
            AssembledContext {
                budget_chars: cfg.budget_chars,
                ..Default::default()
            }
        } else {
            assemble_context(&local, &global, cfg.budget_chars, cfg.facts_first)?
        };
        let request = GenerationRequest {
            system: cfg.system_preamble.clone(),
            context_blocks: context.blocks.iter().map(ContextBlock::render).collect(),
            query: fused.clone(),
        };
        let response = match self.generator.generate(&request) {
            Ok(r) if !r.answer.trim().is_empty() => r,
            Ok(_) => {
                return Err(GrgError::Generation {
                    source: ClientError::protocol(self.generator.name(), "empty answer"),
                    context: Box::new(context),
                })
            }
            Err(source) => {
                return Err(GrgError::Generation {
                    source,
                    context: Box::new(context),
                })
            }
        };
        Ok(Answer {
            answer: response.answer,
            diagnostics: Diagnostics {
                mode,
                fused_query: fused,
                query_entities: entities.entity_ids,
                local_hits: local.hits.len(),
                facts: context.facts().len(),
                notices,
                generator: response.generator,
                usage: response.usage,
            },
            context,
        })
    }
}

/// Chunk, embed, index and graph a cleaned corpus in one go.
pub struct Stores<T> {
    pub chunks: ChunkStore,
    pub index: VectorIndex<T>,
    pub graph: KnowledgeGraph,
    pub graph_report: BuildReport,
}

pub fn build_stores<T: Scalar>(
    docs: &[CleanDocument],
    policy: &ChunkPolicy,
    embedder: &dyn Embedder<T>,
    mode: IndexMode,
    extractor: &dyn ExtractorClient,
) -> Result<Stores<T>, GrgError> {
    let mut chunks = Vec::new();
    for d in docs {
        chunks.extend(chunk_document(d, policy)?);
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embed_batch(&texts, embedder)?;
    let pairs = chunks.iter().map(|c| c.chunk_id.clone()).zip(vectors).collect();
    let index = VectorIndex::build(pairs, mode)?;
    let built = build_graph(&chunks, extractor, &BuildOptions::default())?;
    Ok(Stores {
        chunks: ChunkStore::new(chunks),
        index,
        graph: built.graph,
        graph_report: built.report,
    })
}

#[cfg(test)]
mod tests;
