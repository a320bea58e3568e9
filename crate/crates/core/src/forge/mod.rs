//! Instruction-record generation, quality filtering and training export.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::embed::Chunk;
use crate::jsonl::{self, JsonlError};
use crate::text::{char_len, sentences};

pub const DEFAULT_INSTRUCTION: &str = "This is a Question and Answer task related to 3GPP.";
pub const MIN_ANSWER_CHARS: usize = 3;
pub const MAX_ANSWER_CHARS: usize = 400;
pub const RECORDS_FILE: &str = "records.jsonl";
pub const CONFIG_FILE: &str = "training_config.json";

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("nothing to export")]
    NothingToExport,
    #[error("instruction template is empty")]
    EmptyTemplate,
    #[error("min_score {0} outside [0, 1]")]
    MinScore(f64),
    #[error("record {index} is invalid: {message}")]
    InvalidRecord { index: usize, message: String },
    #[error("training config invalid: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One instruction-tuning example, serialized with capitalized keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstructionRecord {
    #[serde(rename = "Instruction")]
    pub instruction: String,
    #[serde(rename = "Input")]
    pub input: String,
    #[serde(rename = "Output")]
    pub output: String,
    #[serde(rename = "Metadata", default)]
    pub metadata: String,
}

impl InstructionRecord {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("Instruction", &self.instruction), ("Input", &self.input), ("Output", &self.output)] {
            if v.trim().is_empty() {
                return Err(format!("{name} is empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub chunk_id: String,
    pub doc_id: String,
    pub span: (usize, usize),
    /// Answer occurs in the chunk (case-insensitive).
    pub grounded: bool,
}

pub trait QaGeneratorClient: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, text: &str, instruction: &str) -> Result<Vec<(String, String)>, ClientError>;
    fn allows_concurrent_calls(&self) -> bool {
        false
    }
}

static SERVES_AS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:The|the)\s+(.+?)\s+serves\s+as\s+(.+)\.$").expect("valid regex"));
static IS_A: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(.+?)\s+is\s+(.+)\.$").expect("valid regex"));

/// Cloze-style questions from declarative sentences:
/// "The X serves as Y." asks for the purpose of the X and answers with the
/// whole sentence; "X is Y." asks "What is X?" and answers "Y".
#[derive(Debug, Clone, Copy, Default)]
pub struct StubQaGenerator;

impl QaGeneratorClient for StubQaGenerator {
    fn name(&self) -> &str {
        "stub-qa"
    }

    fn generate(&self, text: &str, _instruction: &str) -> Result<Vec<(String, String)>, ClientError> {
        let mut out = Vec::new();
        for s in sentences(text) {
            if let Some(c) = SERVES_AS.captures(s) {
                out.push((format!("What is the purpose of the {}?", &c[1]), s.to_owned()));
            } else if let Some(c) = IS_A.captures(s) {
                let subject = c[1].trim();
                if subject.split_whitespace().count() <= 6 {
                    out.push((format!("What is {subject}?"), c[2].trim().to_owned()));
                }
            }
        }
        Ok(out)
    }

    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}

pub fn is_grounded(answer: &str, source: &str) -> bool {
    !answer.trim().is_empty() && source.to_lowercase().contains(&answer.trim().to_lowercase())
}

pub fn generate_qa(chunk: &Chunk, generator: &dyn QaGeneratorClient, instruction: &str) -> Result<Vec<QaPair>, ClientError> {
    if chunk.text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(generator
        .generate(&chunk.text, instruction)?
        .into_iter()
        .map(|(question, answer)| QaPair {
            grounded: is_grounded(&answer, &chunk.text),
            question,
            answer,
            chunk_id: chunk.chunk_id.clone(),
            doc_id: chunk.doc_id.clone(),
            span: chunk.span,
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QaRun {
    pub pairs: Vec<QaPair>,
    pub notices: Vec<String>,
}

/// `generate_qa` over every chunk; failing chunks are skipped with a notice.
/// Output follows chunk order.
pub fn generate_all(chunks: &[Chunk], generator: &dyn QaGeneratorClient, instruction: &str) -> QaRun {
    let run = |c: &Chunk| generate_qa(c, generator, instruction).map_err(|e| format!("chunk {} skipped: {e}", c.chunk_id));
    let results: Vec<_> = if generator.allows_concurrent_calls() {
        chunks.par_iter().map(run).collect()
    } else {
        chunks.iter().map(run).collect()
    };
    let mut out = QaRun::default();
    for r in results {
        match r {
            Ok(p) => out.pairs.extend(p),
            Err(n) => out.notices.push(n),
        }
    }
    for p in out.pairs.iter().filter(|p| !p.grounded) {
        out.notices.push(format!("ungrounded answer flagged in {}", p.chunk_id));
    }
    out
}

pub fn citation(doc_id: &str, span: (usize, usize)) -> String {
    format!("{doc_id}, span [{},{})", span.0, span.1)
}

/// Parse a `citation` string back into `(doc_id, span)`.
pub fn parse_citation(metadata: &str) -> Option<(String, (usize, usize))> {
    let (doc, rest) = metadata.rsplit_once(", span [")?;
    let (s, e) = rest.strip_suffix(')')?.split_once(',')?;
    Some((doc.to_owned(), (s.trim().parse().ok()?, e.trim().parse().ok()?)))
}

pub fn build_records(pairs: &[QaPair], instruction: &str) -> Result<Vec<InstructionRecord>, ForgeError> {
    if instruction.trim().is_empty() {
        return Err(ForgeError::EmptyTemplate);
    }
    Ok(pairs
        .iter()
        .map(|p| InstructionRecord {
            instruction: instruction.to_owned(),
            input: p.question.clone(),
            output: p.answer.clone(),
            metadata: citation(&p.doc_id, p.span),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub score: f64,
    pub reason: String,
}

/// Scores one record in `[0, 1]`.
pub trait RecordJudge: Send + Sync {
    fn name(&self) -> &str;
    fn assess(&self, record: &InstructionRecord) -> Result<Assessment, ClientError>;
}

/// Score 1 when the answer is 3..=400 chars and occurs in the cited chunk,
/// else 0 with the failing rule as reason.
#[derive(Debug, Clone, Default)]
pub struct StubRecordJudge {
    sources: BTreeMap<(String, (usize, usize)), String>,
}

impl StubRecordJudge {
    pub fn new<'a>(chunks: impl IntoIterator<Item = &'a Chunk>) -> Self {
        Self {
            sources: chunks
                .into_iter()
                .map(|c| ((c.doc_id.clone(), c.span), c.text.clone()))
                .collect(),
        }
    }
}

impl RecordJudge for StubRecordJudge {
    fn name(&self) -> &str {
        "stub-record-judge"
    }

    fn assess(&self, record: &InstructionRecord) -> Result<Assessment, ClientError> {
        let verdict = |score: f64, reason: &str| Ok(Assessment { score, reason: reason.into() });
        let len = char_len(record.output.trim());
        if !(MIN_ANSWER_CHARS..=MAX_ANSWER_CHARS).contains(&len) {
            return verdict(0.0, "answer-length");
        }
        let source = parse_citation(&record.metadata).and_then(|key| self.sources.get(&key));
        match source {
            Some(text) if is_grounded(&record.output, text) => verdict(1.0, "ok"),
            _ => verdict(0.0, "ungrounded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejected {
    pub record: InstructionRecord,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QualityReport {
    pub kept: Vec<InstructionRecord>,
    pub rejected: Vec<Rejected>,
}

fn dedup_key(r: &InstructionRecord) -> (String, String, String) {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    (norm(&r.instruction), norm(&r.input), norm(&r.output))
}

/// Invalid records and repeats of an earlier record are rejected first; the
/// rest are kept when the judge scores them at least `min_score`.
pub fn assess_quality(records: &[InstructionRecord], judge: &dyn RecordJudge, min_score: f64) -> Result<QualityReport, ForgeError> {
    if !(0.0..=1.0).contains(&min_score) {
        return Err(ForgeError::MinScore(min_score));
    }
    let mut seen = HashSet::new();
    let mut report = QualityReport::default();
    for r in records {
        let reject = |reason: String| Rejected {
            record: r.clone(),
            reason,
        };
        if let Err(e) = r.validate() {
            report.rejected.push(reject(format!("invalid: {e}")));
            continue;
        }
        if !seen.insert(dedup_key(r)) {
            report.rejected.push(reject("duplicate".into()));
            continue;
        }
        match judge.assess(r) {
            Ok(a) if a.score >= min_score => report.kept.push(r.clone()),
            Ok(a) => report.rejected.push(reject(a.reason)),
            Err(e) => report.rejected.push(reject(format!("judge-error: {e}"))),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub phase: Phase,
    pub initial_lr: f64,
    pub scheduler: String,
    pub optimizer: String,
    pub lora_rank: u32,
    pub lora_scale: u32,
    pub precision: String,
}

impl TrainingConfig {
    pub fn default_for(phase: Phase) -> Self {
        Self {
            phase,
            initial_lr: match phase {
                Phase::Pretrain => 5e-6,
                Phase::Finetune => 1e-5,
            },
            scheduler: "cosine".into(),
            optimizer: "adam".into(),
            lora_rank: 8,
            lora_scale: 16,
            precision: "bf16".into(),
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::default_for(Phase::Pretrain), Self::default_for(Phase::Finetune)]
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(ForgeError::InvalidConfig(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if self.lora_rank == 0 || self.lora_scale == 0 {
            return Err(ForgeError::InvalidConfig("lora_rank and lora_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundlePaths {
    pub records: PathBuf,
    pub config: PathBuf,
}

/// Write `records.jsonl` and `training_config.json` (a JSON array) into
/// `dir`. Empty `configs` means the defaults.
pub fn export_training_bundle(records: &[InstructionRecord], configs: &[TrainingConfig], dir: &Path) -> Result<BundlePaths, ForgeError> {
    if records.is_empty() {
        return Err(ForgeError::NothingToExport);
    }
    for (index, r) in records.iter().enumerate() {
        r.validate().map_err(|message| ForgeError::InvalidRecord { index, message })?;
    }
    let configs = if configs.is_empty() { TrainingConfig::defaults() } else { configs.to_vec() };
    for c in &configs {
        c.validate()?;
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ForgeError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let paths = BundlePaths {
        records: dir.join(RECORDS_FILE),
        config: dir.join(CONFIG_FILE),
    };
    jsonl::write(&paths.records, records)?;
    let text = serde_json::to_string_pretty(&configs).expect("configs serialize");
    std::fs::write(&paths.config, text + "\n").map_err(io(&paths.config))?;
    Ok(paths)
}

pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>, ForgeError> {
    Ok(jsonl::read(path)?)
}

pub fn read_configs(path: &Path) -> Result<Vec<TrainingConfig>, ForgeError> {
    let text = std::fs::read_to_string(path).map_err(|source| ForgeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ForgeError::InvalidConfig(e.to_string()))
}
