//! Generator contract and the needle-driven mock.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::ClientError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system: String,
    pub context_blocks: Vec<String>,
    pub query: String,
}

impl GenerationRequest {
    /// Flat prompt for text-completion backends.
    pub fn prompt(&self) -> String {
        let mut out = self.system.clone();
        if !self.context_blocks.is_empty() {
            out.push_str("\n\nContext:\n");
            out.push_str(&self.context_blocks.join("\n\n"));
        }
        out.push_str("\n\nQuestion:\n");
        out.push_str(&self.query);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub answer: String,
    pub generator: String,
    #[serde(default)]
    pub usage: BTreeMap<String, u64>,
}

pub trait GeneratorClient: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError>;
    fn allows_concurrent_calls(&self) -> bool {
        false
    }
}

/// Mock reply when no needle is visible. Contains no standalone option
/// letter, so it parses as an abstention.
pub const MOCK_FALLBACK: &str = "Insufficient information to choose.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// When set, the rule only applies to queries containing this text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    pub needle: String,
    pub answer: String,
}

/// Answers with the first applicable rule whose needle occurs verbatim in
/// the context blocks or the query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockGenerator {
    pub rules: Vec<MockRule>,
}

impl MockGenerator {
    pub fn new(rules: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            rules: rules
                .into_iter()
                .map(|(needle, answer)| MockRule {
                    trigger: None,
                    needle,
                    answer,
                })
                .collect(),
        }
    }

    /// JSON array of `{trigger?, needle, answer}`.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let rules = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self { rules })
    }
}

impl GeneratorClient for MockGenerator {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let visible = |needle: &str| {
            request.query.contains(needle) || request.context_blocks.iter().any(|b| b.contains(needle))
        };
        let answer = self
            .rules
            .iter()
            .find(|r| {
                let applies = r.trigger.as_deref().is_none_or(|t| request.query.contains(t));
                applies && !r.needle.is_empty() && visible(&r.needle)
            })
            .map_or(MOCK_FALLBACK, |r| r.answer.as_str())
            .to_owned();
        let usage = BTreeMap::from([
            ("prompt_chars".to_owned(), request.prompt().chars().count() as u64),
            ("answer_chars".to_owned(), answer.chars().count() as u64),
        ]);
        Ok(GenerationResponse {
            answer,
            generator: self.name().to_owned(),
            usage,
        })
    }

    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}
