//! TOML configuration. Every field has a default, so an empty file (or no
//! file) is valid. Relative paths resolve against the config file's
//! directory; `GRG_STORE_ROOT` overrides `store_root`.

use std::path::{Path, PathBuf};

use grg_core::embed::ChunkPolicy;
use grg_core::grg::{EngineConfig, Mode};
use grg_core::vindex::{AnnParams, IndexMode};
use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

pub const STORE_ROOT_ENV: &str = "GRG_STORE_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_root: PathBuf,
    pub chunking: ChunkPolicy,
    pub embedder: EmbedderConfig,
    pub index: IndexConfig,
    pub retrieval: RetrievalConfig,
    pub corpus: CorpusConfig,
    pub forge: ForgeConfig,
    pub mmio: MmioConfig,
    pub adapters: Adapters,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store_root: PathBuf::from("store"),
            chunking: ChunkPolicy::default(),
            embedder: EmbedderConfig::default(),
            index: IndexConfig::default(),
            retrieval: RetrievalConfig::default(),
            corpus: CorpusConfig::default(),
            forge: ForgeConfig::default(),
            mmio: MmioConfig::default(),
            adapters: Adapters::default(),
            service: ServiceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub attempts: usize,
    /// Stub data file: mock generator rules or the image fixture table.
    pub fixture: Option<PathBuf>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            kind: AdapterKind::Stub,
            endpoint: None,
            timeout_ms: 30_000,
            attempts: 3,
            fixture: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Adapters {
    pub generator: AdapterConfig,
    pub judge: AdapterConfig,
    pub extractor: AdapterConfig,
    pub captioner: AdapterConfig,
    pub ocr: AdapterConfig,
    pub qa: AdapterConfig,
    pub record_judge: AdapterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: AdapterKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: AdapterKind::Stub,
            dim: 256,
            endpoint: None,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub mode: IndexMode,
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let p = AnnParams::default();
        Self {
            mode: IndexMode::Exact,
            m: p.m,
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            seed: p.seed,
        }
    }
}

impl IndexConfig {
    pub fn ann_params(&self) -> AnnParams {
        AnnParams {
            m: self.m,
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub depth: usize,
    pub budget_chars: usize,
    pub facts_first: bool,
    pub default_mode: Mode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            k: e.k,
            depth: e.depth,
            budget_chars: e.budget_chars,
            facts_first: e.facts_first,
            default_mode: Mode::Grg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub keywords: Option<PathBuf>,
    pub denylist: Option<PathBuf>,
    pub use_keyword_filter: bool,
    pub use_judge_filter: bool,
    pub shingle_words: usize,
    pub jaccard_threshold: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let d = grg_core::corpus::DedupConfig::default();
        Self {
            keywords: None,
            denylist: None,
            use_keyword_filter: true,
            use_judge_filter: true,
            shingle_words: d.shingle_words,
            jaccard_threshold: d.jaccard_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub instruction: String,
    pub min_score: f64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            instruction: grg_core::forge::DEFAULT_INSTRUCTION.into(),
            min_score: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmioConfig {
    pub ocr_threshold: f64,
}

impl Default for MmioConfig {
    fn default() -> Self {
        Self {
            ocr_threshold: grg_core::mmio::DEFAULT_OCR_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    pub request_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            request_timeout_ms: 60_000,
        }
    }
}

impl Config {
    /// Parse, resolve relative paths against `base_dir`, and validate.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, GatewayError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `path` if given, else defaults relative to the working
    /// directory. Applies the store-root env override.
    pub fn load(path: Option<&Path>, store_root_override: Option<PathBuf>) -> Result<Self, GatewayError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| GatewayError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let base = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                Self::from_toml(&text, base)?
            }
            None => Self::default(),
        };
        if let Some(root) = store_root_override {
            cfg.store_root = root;
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store_root);
        for p in [&mut self.corpus.keywords, &mut self.corpus.denylist].into_iter().flatten() {
            fix(p);
        }
        let a = &mut self.adapters;
        for ad in [&mut a.generator, &mut a.judge, &mut a.extractor, &mut a.captioner, &mut a.ocr, &mut a.qa, &mut a.record_judge] {
            if let Some(p) = ad.fixture.as_mut() {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::Config(m));
        self.chunking.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
        let r = &self.retrieval;
        if r.k == 0 {
            return bad("retrieval.k must be at least 1".into());
        }
        if !(1..=2).contains(&r.depth) {
            return bad(format!("retrieval.depth must be 1 or 2, got {}", r.depth));
        }
        if r.budget_chars < grg_core::grg::MIN_BUDGET_CHARS {
            return bad(format!("retrieval.budget_chars must be at least {}", grg_core::grg::MIN_BUDGET_CHARS));
        }
        if !(0.0..=1.0).contains(&self.mmio.ocr_threshold) {
            return bad("mmio.ocr_threshold must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.forge.min_score) {
            return bad("forge.min_score must be in [0, 1]".into());
        }
        if self.embedder.dim < 16 {
            return bad("embedder.dim must be at least 16".into());
        }
        if self.index.m < 2 || self.index.ef_search == 0 || self.index.ef_construction == 0 {
            return bad("index.m must be at least 2 and the beams positive".into());
        }
        let a = &self.adapters;
        let named = [
            ("generator", &a.generator),
            ("judge", &a.judge),
            ("extractor", &a.extractor),
            ("captioner", &a.captioner),
            ("ocr", &a.ocr),
            ("qa", &a.qa),
            ("record_judge", &a.record_judge),
        ];
        for (name, ad) in named {
            if ad.kind == AdapterKind::Http && ad.endpoint.is_none() {
                return bad(format!("adapters.{name}: kind = \"http\" needs an endpoint"));
            }
            if let Some(p) = &ad.fixture {
                if !p.exists() {
                    return bad(format!("adapters.{name}.fixture {} does not exist", p.display()));
                }
            }
        }
        if self.embedder.kind == AdapterKind::Http && self.embedder.endpoint.is_none() {
            return bad("embedder: kind = \"http\" needs an endpoint".into());
        }
        for p in [&self.corpus.keywords, &self.corpus.denylist].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("corpus list {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            k: self.retrieval.k,
            depth: self.retrieval.depth,
            budget_chars: self.retrieval.budget_chars,
            facts_first: self.retrieval.facts_first,
            ocr_threshold: self.mmio.ocr_threshold,
            ..EngineConfig::default()
        }
    }
}
