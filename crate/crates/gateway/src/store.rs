//! On-disk store layout under `store_root`.
//!
//! ```text
//! store.json                   layout marker {layout_version, stages}
//! corpus/clean.jsonl           cleaned documents
//! corpus/report.json           filter report
//! chunks/chunks.jsonl          chunks
//! vectors/vectors.grgv         chunk embeddings
//! index/index.grgi             vector index (GRGV + GRGI sections)
//! graph/graph.json             knowledge graph
//! graph/statements.cypher      property-graph upsert statements
//! forge/                       records.jsonl + training_config.json
//! benchmarks/                  copy of each evaluated benchmark
//! reports/                     eval-<mode>.json and eval-<mode>.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

pub const LAYOUT_VERSION: u32 = 1;
pub const MARKER: &str = "store.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Corpus,
    Index,
    Graph,
    Forge,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Corpus => "corpus",
            Self::Index => "index",
            Self::Graph => "graph",
            Self::Forge => "forge",
        }
    }

    /// CLI command that builds this stage.
    pub fn command(self) -> &'static str {
        match self {
            Self::Corpus => "ingest --manifest <file>",
            Self::Index => "index",
            Self::Graph => "graph",
            Self::Forge => "forge",
        }
    }
}

/// Per-stage build counter and item count, recorded in the marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInfo {
    pub version: u64,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub layout_version: u32,
    #[serde(default)]
    pub stages: BTreeMap<Stage, StageInfo>,
}

impl Default for Marker {
    fn default() -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            stages: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreLayout {
    pub root: PathBuf,
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn marker(&self) -> PathBuf {
        self.root.join(MARKER)
    }
    pub fn clean_corpus(&self) -> PathBuf {
        self.root.join("corpus/clean.jsonl")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.root.join("corpus/report.json")
    }
    pub fn chunks(&self) -> PathBuf {
        self.root.join("chunks/chunks.jsonl")
    }
    pub fn vectors(&self) -> PathBuf {
        self.root.join("vectors/vectors.grgv")
    }
    pub fn index(&self) -> PathBuf {
        self.root.join("index/index.grgi")
    }
    pub fn graph(&self) -> PathBuf {
        self.root.join("graph/graph.json")
    }
    pub fn statements(&self) -> PathBuf {
        self.root.join("graph/statements.cypher")
    }
    pub fn forge_dir(&self) -> PathBuf {
        self.root.join("forge")
    }
    pub fn benchmarks_dir(&self) -> PathBuf {
        self.root.join("benchmarks")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Read the marker; a missing marker is a missing store.
    pub fn read_marker(&self) -> Result<Marker, GatewayError> {
        let path = self.marker();
        let text = std::fs::read_to_string(&path).map_err(|_| GatewayError::MissingStore {
            store: "marker".into(),
            path: path.display().to_string(),
            hint: Stage::Corpus.command().into(),
        })?;
        let marker: Marker =
            serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        if marker.layout_version != LAYOUT_VERSION {
            return Err(GatewayError::LayoutVersion {
                expected: LAYOUT_VERSION,
                found: marker.layout_version,
            });
        }
        Ok(marker)
    }

    /// Marker if present, a fresh one if not.
    pub fn marker_or_default(&self) -> Result<Marker, GatewayError> {
        match self.read_marker() {
            Err(GatewayError::MissingStore { .. }) => Ok(Marker::default()),
            other => other,
        }
    }

    /// Bump a stage's version in the marker.
    pub fn record_stage(&self, stage: Stage, items: usize) -> Result<StageInfo, GatewayError> {
        let mut marker = self.marker_or_default()?;
        let version = marker.stages.get(&stage).map_or(1, |s| s.version + 1);
        let info = StageInfo { version, items };
        marker.stages.insert(stage, info);
        let text = serde_json::to_string_pretty(&marker).expect("marker serializes");
        write_file(&self.marker(), &(text + "\n"))?;
        Ok(info)
    }

    /// Fail unless every listed stage has been built.
    pub fn require(&self, stages: &[Stage]) -> Result<Marker, GatewayError> {
        let marker = self.read_marker()?;
        for s in stages {
            if !marker.stages.contains_key(s) {
                return Err(GatewayError::MissingStore {
                    store: s.as_str().into(),
                    path: self.root.display().to_string(),
                    hint: s.command().into(),
                });
            }
        }
        Ok(marker)
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), GatewayError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| GatewayError::pipeline(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| GatewayError::pipeline(format!("{}: {e}", path.display())))
}
