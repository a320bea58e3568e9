//! Backend selection. Every contract has an offline stub and a JSON-over-HTTP
//! client. Wire formats (one POST per call):
//!
//! | backend      | request                            | response                         |
//! |--------------|------------------------------------|----------------------------------|
//! | embedder     | `{text}`                           | `{vector: [f]}`                  |
//! | judge        | `{title, body}`                    | `{verdict: "KEEP ..."}`          |
//! | extractor    | `{op: "extract"\|"mentions", text}`| `{triples: [..]}` / `{mentions}` |
//! | generator    | `{system, context_blocks, query}`  | `{answer, generator?, usage?}`   |
//! | captioner    | image input                        | `{caption}`                      |
//! | ocr          | image input                        | `{tokens: [..]}`                 |
//! | qa           | `{text, instruction}`              | `{pairs: [{question, answer}]}`  |
//! | record_judge | instruction record                 | `{score, reason}`                |

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use grg_core::client::{with_retries, ClientError};
use grg_core::corpus::{JudgeClient, StubJudge};
use grg_core::embed::{Chunk, Embedder, HashedTrigramEmbedder};
use grg_core::forge::{Assessment, InstructionRecord, QaGeneratorClient, RecordJudge, StubQaGenerator, StubRecordJudge};
use grg_core::grg::{GenerationRequest, GenerationResponse, GeneratorClient, MockGenerator};
use grg_core::kgraph::{ExtractorClient, PatternExtractor, RawMention, RawTriple};
use grg_core::mmio::{CaptionerClient, FixtureStub, ImageInput, OcrClient, OcrToken};
use grg_core::Scalar;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{AdapterConfig, AdapterKind, Config, EmbedderConfig};
use crate::error::GatewayError;

/// Blocking JSON POST client for one backend.
#[derive(Clone)]
pub struct HttpBackend {
    name: String,
    endpoint: String,
    attempts: usize,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("name", &self.name).field("endpoint", &self.endpoint).finish()
    }
}

impl HttpBackend {
    pub fn new(name: &str, endpoint: &str, timeout_ms: u64, attempts: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            name: name.to_owned(),
            endpoint: endpoint.to_owned(),
            attempts: attempts.max(1),
            agent,
        }
    }

    pub fn from_config(name: &str, cfg: &AdapterConfig) -> Self {
        Self::new(name, cfg.endpoint.as_deref().unwrap_or_default(), cfg.timeout_ms, cfg.attempts)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// POST `body`, retrying timeouts and transport failures.
    pub fn call<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ClientError> {
        with_retries(self.attempts, || self.call_once(body))
    }

    fn call_once<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ClientError> {
        let mut resp = self.agent.post(&self.endpoint).send_json(body).map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", detail.chars().take(200).collect::<String>());
            return Err(match status {
                408 | 504 => ClientError::timeout(&self.name, msg),
                429 | 502 | 503 => ClientError::unavailable(&self.name, msg),
                _ => ClientError::protocol(&self.name, msg),
            });
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| ClientError::protocol(&self.name, format!("malformed response: {e}")))
    }

    fn map_err(&self, e: ureq::Error) -> ClientError {
        match e {
            ureq::Error::Timeout(t) => ClientError::timeout(&self.name, t.to_string()),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ClientError::timeout(&self.name, io.to_string()),
            e @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound) => {
                ClientError::transport(&self.name, e.to_string())
            }
            other => ClientError::protocol(&self.name, other.to_string()),
        }
    }
}

pub struct HttpEmbedder {
    http: HttpBackend,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(http: HttpBackend, dim: usize) -> Self {
        Self { http, dim }
    }
}

#[derive(Deserialize)]
struct VectorResp {
    vector: Vec<f64>,
}

impl<T: Scalar> Embedder<T> for HttpEmbedder {
    fn name(&self) -> &str {
        self.http.name()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed_raw(&self, text: &str) -> Result<Vec<T>, ClientError> {
        let r: VectorResp = self.http.call(&json!({ "text": text }))?;
        Ok(r.vector.into_iter().map(T::from_f64_lossy).collect())
    }
    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}

pub struct HttpJudge(pub HttpBackend);

#[derive(Deserialize)]
struct VerdictResp {
    verdict: String,
}

impl JudgeClient for HttpJudge {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn judge(&self, title: &str, body: &str) -> Result<String, ClientError> {
        let r: VerdictResp = self.0.call(&json!({ "title": title, "body": body }))?;
        Ok(r.verdict)
    }
}

pub struct HttpExtractor(pub HttpBackend);

#[derive(Deserialize)]
struct TriplesResp {
    triples: Vec<RawTriple>,
}

#[derive(Deserialize)]
struct MentionsResp {
    mentions: Vec<RawMention>,
}

impl ExtractorClient for HttpExtractor {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn extract(&self, text: &str) -> Result<Vec<RawTriple>, ClientError> {
        let r: TriplesResp = self.0.call(&json!({ "op": "extract", "text": text }))?;
        Ok(r.triples)
    }
    fn mentions(&self, text: &str) -> Result<Vec<RawMention>, ClientError> {
        let r: MentionsResp = self.0.call(&json!({ "op": "mentions", "text": text }))?;
        Ok(r.mentions)
    }
}

pub struct HttpGenerator(pub HttpBackend);

#[derive(Deserialize)]
struct GenerateResp {
    answer: String,
    #[serde(default)]
    generator: Option<String>,
    #[serde(default)]
    usage: BTreeMap<String, u64>,
}

impl GeneratorClient for HttpGenerator {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let r: GenerateResp = self.0.call(request)?;
        Ok(GenerationResponse {
            answer: r.answer,
            generator: r.generator.unwrap_or_else(|| self.0.name().to_owned()),
            usage: r.usage,
        })
    }
    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}

pub struct HttpCaptioner(pub HttpBackend);

#[derive(Deserialize)]
struct CaptionResp {
    caption: String,
}

impl CaptionerClient for HttpCaptioner {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn caption(&self, image: &ImageInput) -> Result<String, ClientError> {
        let r: CaptionResp = self.0.call(image)?;
        Ok(r.caption)
    }
}

pub struct HttpOcr(pub HttpBackend);

#[derive(Deserialize)]
struct TokensResp {
    tokens: Vec<OcrToken<f64>>,
}

impl<T: Scalar> OcrClient<T> for HttpOcr {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn read_text(&self, image: &ImageInput) -> Result<Vec<OcrToken<T>>, ClientError> {
        let r: TokensResp = self.0.call(image)?;
        Ok(r
            .tokens
            .into_iter()
            .map(|t| OcrToken {
                text: t.text,
                confidence: T::from_f64_lossy(t.confidence),
                bbox: t.bbox,
            })
            .collect())
    }
}

pub struct HttpQa(pub HttpBackend);

#[derive(Deserialize)]
struct PairsResp {
    pairs: Vec<PairResp>,
}

#[derive(Deserialize)]
struct PairResp {
    question: String,
    answer: String,
}

impl QaGeneratorClient for HttpQa {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn generate(&self, text: &str, instruction: &str) -> Result<Vec<(String, String)>, ClientError> {
        let r: PairsResp = self.0.call(&json!({ "text": text, "instruction": instruction }))?;
        Ok(r.pairs.into_iter().map(|p| (p.question, p.answer)).collect())
    }
}

pub struct HttpRecordJudge(pub HttpBackend);

impl RecordJudge for HttpRecordJudge {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn assess(&self, record: &InstructionRecord) -> Result<Assessment, ClientError> {
        self.0.call(record)
    }
}

/// All backends selected by a config.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Arc<dyn Embedder<f32>>,
    pub judge: Arc<dyn JudgeClient>,
    pub extractor: Arc<dyn ExtractorClient>,
    pub generator: Arc<dyn GeneratorClient>,
    pub captioner: Option<Arc<dyn CaptionerClient>>,
    pub ocr: Option<Arc<dyn OcrClient<f32>>>,
    pub qa: Arc<dyn QaGeneratorClient>,
    record_judge: AdapterConfig,
}

fn http(name: &str, cfg: &AdapterConfig) -> Option<HttpBackend> {
    (cfg.kind == AdapterKind::Http).then(|| HttpBackend::from_config(name, cfg))
}

pub fn embedder(cfg: &EmbedderConfig) -> Result<Arc<dyn Embedder<f32>>, GatewayError> {
    Ok(match cfg.kind {
        AdapterKind::Stub => {
            Arc::new(HashedTrigramEmbedder::<f32>::new(cfg.dim).map_err(|e| GatewayError::Config(e.to_string()))?)
        }
        AdapterKind::Http => Arc::new(HttpEmbedder::new(
            HttpBackend::new("embedder", cfg.endpoint.as_deref().unwrap_or_default(), cfg.timeout_ms, 3),
            cfg.dim,
        )),
    })
}

impl Backends {
    pub fn from_config(cfg: &Config) -> Result<Self, GatewayError> {
        let a = &cfg.adapters;
        let judge: Arc<dyn JudgeClient> = match http("judge", &a.judge) {
            Some(h) => Arc::new(HttpJudge(h)),
            None => Arc::new(StubJudge::telecom_default()),
        };
        let extractor: Arc<dyn ExtractorClient> = match http("extractor", &a.extractor) {
            Some(h) => Arc::new(HttpExtractor(h)),
            None => Arc::new(PatternExtractor::default()),
        };
        let generator: Arc<dyn GeneratorClient> = match http("generator", &a.generator) {
            Some(h) => Arc::new(HttpGenerator(h)),
            None => match &a.generator.fixture {
                Some(p) => Arc::new(MockGenerator::load(p).map_err(GatewayError::Config)?),
                None => Arc::new(MockGenerator::default()),
            },
        };
        let captioner: Option<Arc<dyn CaptionerClient>> = match http("captioner", &a.captioner) {
            Some(h) => Some(Arc::new(HttpCaptioner(h))),
            None => match &a.captioner.fixture {
                Some(p) => Some(Arc::new(FixtureStub::load(p).map_err(|e| GatewayError::Config(e.to_string()))?)),
                None => None,
            },
        };
        let ocr: Option<Arc<dyn OcrClient<f32>>> = match http("ocr", &a.ocr) {
            Some(h) => Some(Arc::new(HttpOcr(h))),
            None => match &a.ocr.fixture {
                Some(p) => Some(Arc::new(FixtureStub::load(p).map_err(|e| GatewayError::Config(e.to_string()))?)),
                None => None,
            },
        };
        let qa: Arc<dyn QaGeneratorClient> = match http("qa", &a.qa) {
            Some(h) => Arc::new(HttpQa(h)),
            None => Arc::new(StubQaGenerator),
        };
        Ok(Self {
            embedder: embedder(&cfg.embedder)?,
            judge,
            extractor,
            generator,
            captioner,
            ocr,
            qa,
            record_judge: a.record_judge.clone(),
        })
    }

    /// The stub judge needs the chunk store to check grounding.
    pub fn record_judge(&self, chunks: &[Chunk]) -> Arc<dyn RecordJudge> {
        match http("record_judge", &self.record_judge) {
            Some(h) => Arc::new(HttpRecordJudge(h)),
            None => Arc::new(StubRecordJudge::new(chunks)),
        }
    }
}
