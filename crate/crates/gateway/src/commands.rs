//! Pipeline commands shared by the CLI and the service. Each returns a JSON
//! result plus a short human summary.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use grg_core::corpus::{self, CleanDocument, CorpusManifest, DedupConfig, FilterReport, PipelineConfig};
use grg_core::embed::{chunk_document, embed_batch, Chunk};
use grg_core::evalbench::{load_benchmark, run_eval, EvalReport};
use grg_core::forge::{self, TrainingConfig};
use grg_core::grg::{ChunkStore, Engine, Mode, Query};
use grg_core::kgraph::{build_graph, BuildOptions, KnowledgeGraph};
use grg_core::mmio::ImageInput;
use grg_core::text::TermSet;
use grg_core::vindex::VectorIndex;
use serde::Serialize;
use serde_json::{json, Value};

use crate::adapters::Backends;
use crate::config::Config;
use crate::error::GatewayError;
use crate::store::{write_file, Stage, StoreLayout};

/// Keywords used when the config names no keyword list.
pub const DEFAULT_KEYWORDS: [&str; 12] = [
    "3gpp", "5g", "lte", "nr", "mimo", "ofdm", "ofdma", "wlan", "ieee", "ran", "gnb", "wireless",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub json: Value,
    pub summary: String,
}

fn pipe(e: impl std::fmt::Display) -> GatewayError {
    GatewayError::pipeline(e)
}

fn read_terms(path: Option<&Path>) -> Result<Option<TermSet>, GatewayError> {
    path.map(|p| {
        std::fs::read_to_string(p)
            .map(|t| TermSet::parse_list(&t))
            .map_err(|e| GatewayError::Config(format!("{}: {e}", p.display())))
    })
    .transpose()
}

pub fn pipeline_config(cfg: &Config) -> Result<PipelineConfig, GatewayError> {
    let c = &cfg.corpus;
    let keywords = read_terms(c.keywords.as_deref())?.unwrap_or_else(|| TermSet::new(DEFAULT_KEYWORDS));
    Ok(PipelineConfig {
        keywords,
        denylist: read_terms(c.denylist.as_deref())?.unwrap_or_default(),
        use_keyword_filter: c.use_keyword_filter,
        use_judge_filter: c.use_judge_filter,
        dedup: DedupConfig {
            shingle_words: c.shingle_words,
            jaccard_threshold: c.jaccard_threshold,
        },
    })
}

/// Load, filter and deduplicate a manifest into `corpus/`.
pub fn ingest(cfg: &Config, backends: &Backends, manifest: &Path) -> Result<Outcome, GatewayError> {
    let manifest = CorpusManifest::load(manifest).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
    let (docs, report) = corpus::preprocess(&manifest, &pipeline_config(cfg)?, backends.judge.as_ref()).map_err(pipe)?;
    let layout = StoreLayout::new(&cfg.store_root);
    corpus::write_clean_corpus(&layout.clean_corpus(), &docs).map_err(pipe)?;
    write_file(&layout.filter_report(), &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    let info = layout.record_stage(Stage::Corpus, docs.len())?;
    Ok(Outcome {
        summary: format!(
            "ingested {} documents: kept {}, dropped {}, quarantined {} (corpus v{})",
            report.input_count,
            report.kept_count,
            report.dropped_total(),
            report.quarantined.len(),
            info.version
        ),
        json: json!({ "command": "ingest", "version": info.version, "report": report }),
    })
}

pub fn read_filter_report(layout: &StoreLayout) -> Result<FilterReport, GatewayError> {
    let text = std::fs::read_to_string(layout.filter_report()).map_err(pipe)?;
    serde_json::from_str(&text).map_err(pipe)
}

fn read_chunks(layout: &StoreLayout) -> Result<Vec<Chunk>, GatewayError> {
    grg_core::jsonl::read(&layout.chunks()).map_err(pipe)
}

/// Chunk and embed the clean corpus into `chunks/` and `index/`.
pub fn index(cfg: &Config, backends: &Backends) -> Result<Outcome, GatewayError> {
    let layout = StoreLayout::new(&cfg.store_root);
    layout.require(&[Stage::Corpus])?;
    let docs = corpus::read_clean_corpus(&layout.clean_corpus()).map_err(pipe)?;
    let mut chunks = Vec::new();
    for d in &docs {
        chunks.extend(chunk_document(d, &cfg.chunking).map_err(pipe)?);
    }
    if chunks.is_empty() {
        return Err(GatewayError::pipeline("the clean corpus has no text to index"));
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embed_batch(&texts, backends.embedder.as_ref()).map_err(|e| match e {
        grg_core::embed::EmbedError::Backend(c) => GatewayError::Adapter(c),
        other => pipe(other),
    })?;
    let pairs: Vec<_> = chunks.iter().map(|c| c.chunk_id.clone()).zip(vectors).collect();
    let dim = backends.embedder.dim();
    for dir in [layout.vectors(), layout.index()] {
        std::fs::create_dir_all(dir.parent().expect("store files have a parent")).map_err(pipe)?;
    }
    grg_core::embed::store::write_vectors(&layout.vectors(), dim, &pairs).map_err(pipe)?;
    let index = VectorIndex::build_with(pairs, cfg.index.mode, cfg.index.ann_params()).map_err(pipe)?;
    grg_core::jsonl::write(&layout.chunks(), &chunks).map_err(pipe)?;
    index.persist(&layout.index()).map_err(pipe)?;
    let info = layout.record_stage(Stage::Index, chunks.len())?;
    Ok(Outcome {
        summary: format!(
            "indexed {} chunks from {} documents (dim {}, {:?}, index v{})",
            chunks.len(),
            docs.len(),
            index.dim(),
            index.mode(),
            info.version
        ),
        json: json!({
            "command": "index",
            "version": info.version,
            "documents": docs.len(),
            "chunks": chunks.len(),
            "dim": index.dim(),
            "mode": index.mode(),
        }),
    })
}

/// Extract the knowledge graph from the chunk store into `graph/`.
pub fn graph(cfg: &Config, backends: &Backends) -> Result<Outcome, GatewayError> {
    let layout = StoreLayout::new(&cfg.store_root);
    layout.require(&[Stage::Index])?;
    let chunks = read_chunks(&layout)?;
    let built = build_graph(&chunks, backends.extractor.as_ref(), &BuildOptions::default()).map_err(pipe)?;
    built.graph.export(&layout.graph()).map_err(pipe)?;
    built.graph.export_statements(&layout.statements()).map_err(pipe)?;
    let info = layout.record_stage(Stage::Graph, built.graph.entity_count())?;
    let g = &built.graph;
    Ok(Outcome {
        summary: format!(
            "graph has {} entities and {} relations from {} triples; {} chunks unextracted (graph v{})",
            g.entity_count(),
            g.relation_count(),
            built.report.triples,
            built.report.unextracted.len(),
            info.version
        ),
        json: json!({
            "command": "graph",
            "version": info.version,
            "entities": g.entity_count(),
            "relations": g.relation_count(),
            "report": built.report,
        }),
    })
}

/// Generate, assess and export instruction records into `forge/`.
pub fn forge(cfg: &Config, backends: &Backends) -> Result<Outcome, GatewayError> {
    let layout = StoreLayout::new(&cfg.store_root);
    layout.require(&[Stage::Index])?;
    let chunks = read_chunks(&layout)?;
    let run = forge::generate_all(&chunks, backends.qa.as_ref(), &cfg.forge.instruction);
    let records = forge::build_records(&run.pairs, &cfg.forge.instruction).map_err(pipe)?;
    let judge = backends.record_judge(&chunks);
    let quality = forge::assess_quality(&records, judge.as_ref(), cfg.forge.min_score).map_err(pipe)?;
    let paths = forge::export_training_bundle(&quality.kept, &TrainingConfig::defaults(), &layout.forge_dir())
        .map_err(|e| match e {
            forge::ForgeError::NothingToExport => GatewayError::pipeline("nothing to export: every generated record was rejected"),
            other => pipe(other),
        })?;
    let info = layout.record_stage(Stage::Forge, quality.kept.len())?;
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &quality.rejected {
        *reasons.entry(r.reason.as_str()).or_default() += 1;
    }
    Ok(Outcome {
        summary: format!(
            "forged {} records ({} generated, {} rejected) into {}",
            quality.kept.len(),
            records.len(),
            quality.rejected.len(),
            paths.records.display()
        ),
        json: json!({
            "command": "forge",
            "version": info.version,
            "generated": records.len(),
            "kept": quality.kept.len(),
            "rejected": reasons,
            "notices": run.notices,
            "records": paths.records,
            "training_config": paths.config,
        }),
    })
}

/// Document fields exposed next to a chunk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocInfo {
    pub doc_id: String,
    pub title: String,
    pub source_kind: corpus::SourceKind,
    pub meta: corpus::Meta,
}

impl From<&CleanDocument> for DocInfo {
    fn from(d: &CleanDocument) -> Self {
        Self {
            doc_id: d.doc_id.clone(),
            title: d.title.clone(),
            source_kind: d.source_kind,
            meta: d.meta.clone(),
        }
    }
}

/// Engine over a built store.
pub struct Served {
    pub engine: Engine<f32>,
    pub docs: BTreeMap<String, DocInfo>,
    pub stages: BTreeMap<Stage, crate::store::StageInfo>,
}

impl Served {
    pub fn open(cfg: &Config, backends: &Backends) -> Result<Self, GatewayError> {
        let layout = StoreLayout::new(&cfg.store_root);
        let marker = layout.require(&[Stage::Corpus, Stage::Index, Stage::Graph])?;
        let docs = corpus::read_clean_corpus(&layout.clean_corpus()).map_err(pipe)?;
        let chunks = read_chunks(&layout)?;
        let index = VectorIndex::<f32>::load(&layout.index()).map_err(pipe)?;
        if index.dim() != backends.embedder.dim() {
            return Err(GatewayError::Config(format!(
                "index dim {} does not match embedder dim {}; rebuild with `grg index`",
                index.dim(),
                backends.embedder.dim()
            )));
        }
        let graph = KnowledgeGraph::import(&layout.graph()).map_err(pipe)?;
        Ok(Self {
            engine: Engine {
                embedder: backends.embedder.clone(),
                index: Arc::new(index),
                chunks: Arc::new(ChunkStore::new(chunks)),
                graph: Arc::new(graph),
                extractor: backends.extractor.clone(),
                generator: backends.generator.clone(),
                captioner: backends.captioner.clone(),
                ocr: backends.ocr.clone(),
                config: cfg.engine_config(),
            },
            docs: docs.iter().map(|d| (d.doc_id.clone(), DocInfo::from(d))).collect(),
            stages: marker.stages,
        })
    }

    pub fn chunk_json(&self, chunk_id: &str) -> Option<Value> {
        let c = self.engine.chunks.get(chunk_id)?;
        Some(json!({
            "chunk_id": c.chunk_id,
            "doc_id": c.doc_id,
            "span": [c.span.0, c.span.1],
            "text": c.text,
            "document": self.docs.get(&c.doc_id),
        }))
    }

    /// Answer as the query endpoint returns it.
    pub fn query(&self, text: &str, image_ids: &[String], mode: Mode) -> Result<Value, GatewayError> {
        let images = image_ids
            .iter()
            .map(|id| ImageInput::fixture(id).map_err(|e| GatewayError::BadRequest(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let query = Query {
            text: text.to_owned(),
            images,
        };
        let answer = self.engine.answer(&query, mode)?;
        let ctx = &answer.context;
        let chunks: Vec<Value> = ctx
            .blocks
            .iter()
            .filter_map(|b| match b {
                grg_core::grg::ContextBlock::Chunk { chunk_id, rank, score, text } => {
                    let c = self.engine.chunks.get(chunk_id);
                    Some(json!({
                        "chunk_id": chunk_id,
                        "doc_id": c.map(|c| c.doc_id.as_str()),
                        "span": c.map(|c| [c.span.0, c.span.1]),
                        "rank": rank,
                        "score": score,
                        "text": text,
                    }))
                }
                _ => None,
            })
            .collect();
        Ok(json!({
            "answer": answer.answer,
            "context": {
                "facts": ctx.facts(),
                "chunks": chunks,
                "total_chars": ctx.total_chars,
                "budget_chars": ctx.budget_chars,
                "truncation_report": ctx.truncation_report,
            },
            "diagnostics": answer.diagnostics,
        }))
    }

    pub fn eval(&self, cfg: &Config, benchmark: &Path, modes: &[Mode]) -> Result<Outcome, GatewayError> {
        let bench = load_benchmark(benchmark).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
        let layout = StoreLayout::new(&cfg.store_root);
        if let Some(name) = benchmark.file_name() {
            let dir = layout.benchmarks_dir();
            std::fs::create_dir_all(&dir).map_err(pipe)?;
            std::fs::copy(benchmark, dir.join(name)).map_err(pipe)?;
        }
        let mut reports: Vec<EvalReport> = Vec::new();
        for &mode in modes {
            let report = run_eval(&bench.questions, &self.engine, mode);
            write_file(&layout.reports_dir().join(format!("eval-{mode}.json")), &(report.to_json() + "\n"))?;
            write_file(&layout.reports_dir().join(format!("eval-{mode}.txt")), &report.summary_table())?;
            reports.push(report);
        }
        let summary = reports
            .iter()
            .map(|r| format!("{}: {}/{} ({:.4})", r.mode, r.correct, r.total, r.accuracy))
            .collect::<Vec<_>>()
            .join(", ");
        let modes_json: serde_json::Map<String, Value> = reports
            .iter()
            .map(|r| {
                (
                    r.mode.to_string(),
                    json!({
                        "total": r.total,
                        "correct": r.correct,
                        "accuracy": r.accuracy,
                        "per_difficulty": r.per_difficulty,
                    }),
                )
            })
            .collect();
        Ok(Outcome {
            summary: format!("{} questions ({} rows rejected); {summary}", bench.questions.len(), bench.rejected.len()),
            json: json!({
                "command": "eval",
                "questions": bench.questions.len(),
                "rejected_rows": bench.rejected,
                "modes": modes_json,
            }),
        })
    }
}

pub fn query(cfg: &Config, backends: &Backends, text: &str, image_ids: &[String], mode: Mode) -> Result<Outcome, GatewayError> {
    let served = Served::open(cfg, backends)?;
    let v = served.query(text, image_ids, mode)?;
    let facts = v["context"]["facts"].as_array().map_or(0, Vec::len);
    let chunks = v["context"]["chunks"].as_array().map_or(0, Vec::len);
    Ok(Outcome {
        summary: format!("{}\n[{mode}: {chunks} chunks, {facts} facts]", v["answer"].as_str().unwrap_or_default()),
        json: v,
    })
}

pub fn eval(cfg: &Config, backends: &Backends, benchmark: &Path, modes: &[Mode]) -> Result<Outcome, GatewayError> {
    Served::open(cfg, backends)?.eval(cfg, benchmark, modes)
}
