//! Corpus loading and the cleaning pipeline:
//! load → strip markup → keyword filter → judge filter → dedup → harmful-term screen.

mod dedup;
mod judge;
mod markup;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::jsonl;
use crate::text::TermSet;

pub use dedup::{dedup, dedup_with, jaccard, shingles, DedupConfig};
pub use judge::{parse_verdict, type_token_ratio, JudgeClient, StubJudge, Verdict};
pub use markup::strip_markup;

pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("failed to load {doc_id}: {message}")]
    Load { doc_id: String, message: String },
    #[error("{failed} of {total} documents failed to load")]
    TooManyLoadFailures { failed: usize, total: usize },
    #[error(transparent)]
    Jsonl(#[from] jsonl::JsonlError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceKind {
    #[serde(rename = "standard_3gpp")]
    Standard3gpp,
    #[serde(rename = "standard_ieee")]
    StandardIeee,
    #[serde(rename = "patent")]
    Patent,
    #[serde(rename = "paper")]
    Paper,
    #[serde(rename = "code")]
    Code,
    #[serde(rename = "wiki")]
    Wiki,
    #[serde(rename = "other")]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub source_kind: SourceKind,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    #[serde(default)]
    pub meta: Meta,
}

impl RawDocument {
    pub fn validate(&self) -> Result<(), String> {
        if self.doc_id.trim().is_empty() {
            return Err("empty doc_id".into());
        }
        if self.body.trim().is_empty() && self.attachments.is_empty() {
            return Err("empty body and no attachments".into());
        }
        Ok(())
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Load,
    Markup,
    Keyword,
    Judge,
    Dedup,
    Harmful,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Markup => "strip_markup",
            Stage::Keyword => "keyword",
            Stage::Judge => "judge",
            Stage::Dedup => "dedup",
            Stage::Harmful => "harmful",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: String,
    pub decision: String,
    pub detail: String,
}

impl TraceEntry {
    pub fn new(stage: Stage, decision: &str, detail: impl Into<String>) -> Self {
        Self {
            stage: stage.name().to_owned(),
            decision: decision.to_owned(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub doc_id: String,
    pub source_kind: SourceKind,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    #[serde(default)]
    pub meta: Meta,
    pub filter_trace: Vec<TraceEntry>,
}

impl CleanDocument {
    /// Strip markup from title and body and open the filter trace.
    pub fn from_raw(raw: RawDocument) -> Self {
        let body = strip_markup(&raw.body);
        let title = strip_markup(&raw.title);
        let removed = raw.body.chars().count().saturating_sub(body.chars().count());
        let mut doc = Self {
            doc_id: raw.doc_id,
            source_kind: raw.source_kind,
            title,
            body,
            attachments: raw.attachments,
            meta: raw.meta,
            filter_trace: Vec::new(),
        };
        doc.record(TraceEntry::new(Stage::Load, "keep", "loaded"));
        doc.record(TraceEntry::new(
            Stage::Markup,
            "keep",
            format!("{removed} chars removed"),
        ));
        doc
    }

    /// Append a trace entry, replacing an earlier entry for the same stage.
    pub fn record(&mut self, entry: TraceEntry) {
        match self.filter_trace.iter_mut().find(|e| e.stage == entry.stage) {
            Some(existing) => *existing = entry,
            None => self.filter_trace.push(entry),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub source_kind: SourceKind,
    pub locator: String,
    #[serde(default)]
    pub meta: Meta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    entries: Vec<ManifestEntry>,
    counts_by_kind: BTreeMap<SourceKind, usize>,
    base_dir: PathBuf,
}

impl CorpusManifest {
    /// Validates non-empty, unique doc ids.
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.doc_id.trim().is_empty() {
                return Err(CorpusError::Manifest {
                    line: i + 1,
                    message: "empty doc_id".into(),
                });
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(CorpusError::Manifest {
                    line: i + 1,
                    message: format!("duplicate doc_id {}", e.doc_id),
                });
            }
        }
        let mut counts_by_kind = BTreeMap::new();
        for e in &entries {
            *counts_by_kind.entry(e.source_kind).or_insert(0) += 1;
        }
        Ok(Self {
            entries,
            counts_by_kind,
            base_dir: base_dir.into(),
        })
    }

    /// Parse JSON Lines text; relative locators resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (line, parsed) in jsonl::parse_lines::<ManifestEntry>(text) {
            entries.push(parsed.map_err(|message| CorpusError::Manifest { line, message })?);
        }
        Self::new(entries, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_jsonl(&self) -> String {
        jsonl::to_string(&self.entries)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn counts_by_kind(&self) -> &BTreeMap<SourceKind, usize> {
        &self.counts_by_kind
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Document content at a `.json` locator.
#[derive(Debug, Default, Deserialize)]
struct ContentFile {
    #[serde(default)]
    title: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    attachments: Vec<Attachment>,
}

/// Resolve one manifest entry. Locators are `inline:<body text>`, a path to a
/// `.json` content file (`{title, body, attachments}`), or a path to a text
/// file used verbatim as the body.
pub fn load_entry(entry: &ManifestEntry, base_dir: &Path) -> Result<RawDocument, CorpusError> {
    let fail = |message: String| CorpusError::Load {
        doc_id: entry.doc_id.clone(),
        message,
    };
    let content = if let Some(body) = entry.locator.strip_prefix("inline:") {
        ContentFile {
            body: body.to_owned(),
            ..Default::default()
        }
    } else {
        let path = base_dir.join(&entry.locator);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| fail(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|x| x == "json") {
            serde_json::from_str(&text).map_err(|e| fail(format!("{}: {e}", path.display())))?
        } else {
            ContentFile {
                body: text,
                ..Default::default()
            }
        }
    };
    let raw = RawDocument {
        doc_id: entry.doc_id.clone(),
        source_kind: entry.source_kind,
        title: content.title,
        body: content.body,
        attachments: content.attachments,
        meta: entry.meta.clone(),
    };
    raw.validate().map_err(fail)?;
    Ok(raw)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeywordDecision {
    Keep { matched: Vec<String> },
    Drop,
}

/// Keep iff any keyword matches title or body on token boundaries,
/// case-insensitively.
pub fn keyword_filter(doc: &CleanDocument, keywords: &TermSet) -> Result<KeywordDecision, CorpusError> {
    if keywords.is_empty() {
        return Err(CorpusError::Config("keyword set is empty".into()));
    }
    let matched = keywords.matches(&[&doc.title, &doc.body]);
    Ok(if matched.is_empty() {
        KeywordDecision::Drop
    } else {
        KeywordDecision::Keep { matched }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgeDecision {
    Keep,
    Drop { reason: String },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum JudgeStageError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("malformed verdict {0:?}")]
    Malformed(String),
}

/// Ask the judge and record its verdict verbatim in the trace.
pub fn judge_filter(
    doc: &mut CleanDocument,
    judge: &dyn JudgeClient,
) -> Result<JudgeDecision, JudgeStageError> {
    let raw = judge.judge(&doc.title, &doc.body)?;
    match parse_verdict(&raw) {
        Some(Verdict::Keep { .. }) => {
            doc.record(TraceEntry::new(Stage::Judge, "keep", raw));
            Ok(JudgeDecision::Keep)
        }
        Some(Verdict::Drop { reason }) => {
            doc.record(TraceEntry::new(Stage::Judge, "drop", raw));
            Ok(JudgeDecision::Drop { reason })
        }
        None => Err(JudgeStageError::Malformed(raw)),
    }
}

/// Denylisted terms found in the document, empty when clean.
pub fn harmful_terms(doc: &CleanDocument, denylist: &TermSet) -> Vec<String> {
    denylist.matches(&[&doc.title, &doc.body])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub doc_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadFailure {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub dropped_by_stage: BTreeMap<String, usize>,
    pub quarantined: Vec<QuarantineEntry>,
    pub duplicate_clusters: Vec<Vec<String>>,
    #[serde(default)]
    pub load_failures: Vec<LoadFailure>,
}

impl FilterReport {
    pub fn new(input_count: usize) -> Self {
        Self {
            input_count,
            ..Default::default()
        }
    }

    pub fn dropped_total(&self) -> usize {
        self.dropped_by_stage.values().sum()
    }

    /// `input = kept + dropped + quarantined`.
    pub fn is_conserved(&self) -> bool {
        self.input_count == self.kept_count + self.dropped_total() + self.quarantined.len()
    }

    fn drop_at(&mut self, stage: Stage) {
        *self.dropped_by_stage.entry(stage.name().to_owned()).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub keywords: TermSet,
    pub denylist: TermSet,
    pub use_keyword_filter: bool,
    pub use_judge_filter: bool,
    pub dedup: DedupConfig,
}

impl PipelineConfig {
    pub fn new(keywords: TermSet) -> Self {
        Self {
            keywords,
            denylist: TermSet::default(),
            use_keyword_filter: true,
            use_judge_filter: true,
            dedup: DedupConfig::default(),
        }
    }
}

enum DocOutcome {
    Kept(CleanDocument),
    Dropped(Stage),
    Quarantined(QuarantineEntry),
}

fn filter_one(raw: RawDocument, config: &PipelineConfig, judge: &dyn JudgeClient) -> DocOutcome {
    let mut doc = CleanDocument::from_raw(raw);
    if config.use_keyword_filter {
        match keyword_filter(&doc, &config.keywords) {
            Ok(KeywordDecision::Keep { matched }) => {
                doc.record(TraceEntry::new(Stage::Keyword, "keep", matched.join(",")))
            }
            // Empty keyword sets are rejected before any document is filtered.
            Ok(KeywordDecision::Drop) | Err(_) => return DocOutcome::Dropped(Stage::Keyword),
        }
    }
    if config.use_judge_filter {
        match judge_filter(&mut doc, judge) {
            Ok(JudgeDecision::Keep) => {}
            Ok(JudgeDecision::Drop { .. }) => return DocOutcome::Dropped(Stage::Judge),
            Err(e) => {
                return DocOutcome::Quarantined(QuarantineEntry {
                    doc_id: doc.doc_id,
                    stage: Stage::Judge.name().to_owned(),
                    error: e.to_string(),
                })
            }
        }
    }
    DocOutcome::Kept(doc)
}

/// Run the full pipeline over pre-loaded documents. `loaded` pairs each
/// manifest doc id with its load result.
pub fn run_pipeline(
    loaded: Vec<(String, Result<RawDocument, CorpusError>)>,
    config: &PipelineConfig,
    judge: &dyn JudgeClient,
) -> Result<(Vec<CleanDocument>, FilterReport), CorpusError> {
    if config.use_keyword_filter && config.keywords.is_empty() {
        return Err(CorpusError::Config("keyword set is empty".into()));
    }
    let total = loaded.len();
    let mut report = FilterReport::new(total);

    let mut raws = Vec::new();
    for (doc_id, result) in loaded {
        match result {
            Ok(raw) => raws.push(raw),
            Err(e) => {
                report.drop_at(Stage::Load);
                report.load_failures.push(LoadFailure {
                    doc_id,
                    error: e.to_string(),
                });
            }
        }
    }
    let failed = report.load_failures.len();
    if failed * 2 > total {
        return Err(CorpusError::TooManyLoadFailures { failed, total });
    }

    let outcomes: Vec<DocOutcome> = raws
        .into_par_iter()
        .map(|raw| filter_one(raw, config, judge))
        .collect();

    let mut survivors = Vec::new();
    for outcome in outcomes {
        match outcome {
            DocOutcome::Kept(doc) => survivors.push(doc),
            DocOutcome::Dropped(stage) => report.drop_at(stage),
            DocOutcome::Quarantined(q) => report.quarantined.push(q),
        }
    }

    let (deduped, dedup_report) = dedup_with(survivors, &config.dedup);
    for (stage, n) in dedup_report.dropped_by_stage {
        *report.dropped_by_stage.entry(stage).or_insert(0) += n;
    }
    report.duplicate_clusters = dedup_report.duplicate_clusters;

    let mut kept = Vec::new();
    for mut doc in deduped {
        let hits = harmful_terms(&doc, &config.denylist);
        if hits.is_empty() {
            doc.record(TraceEntry::new(Stage::Harmful, "keep", "clean"));
            kept.push(doc);
        } else {
            report.drop_at(Stage::Harmful);
        }
    }
    report.kept_count = kept.len();
    debug_assert!(report.is_conserved());
    Ok((kept, report))
}

/// Load every manifest entry and run the pipeline.
pub fn preprocess(
    manifest: &CorpusManifest,
    config: &PipelineConfig,
    judge: &dyn JudgeClient,
) -> Result<(Vec<CleanDocument>, FilterReport), CorpusError> {
    let loaded = manifest
        .entries()
        .par_iter()
        .map(|e| (e.doc_id.clone(), load_entry(e, manifest.base_dir())))
        .collect();
    run_pipeline(loaded, config, judge)
}

pub fn write_clean_corpus(path: &Path, docs: &[CleanDocument]) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, docs)?)
}

pub fn read_clean_corpus(path: &Path) -> Result<Vec<CleanDocument>, CorpusError> {
    Ok(jsonl::read(path)?)
}
