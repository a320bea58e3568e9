//! Judge contract for relevance/quality filtering, plus the offline stub.

use crate::client::ClientError;
use crate::text::tokens_lower;

/// A relevance/quality judge. Implementations return a raw verdict line:
/// `KEEP [detail]` or `DROP <reason>` (case-insensitive keyword). Anything
/// else is a protocol violation.
pub trait JudgeClient: Send + Sync {
    fn name(&self) -> &str;
    fn judge(&self, title: &str, body: &str) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Keep { detail: String },
    Drop { reason: String },
}

/// Parse a raw verdict line.
pub fn parse_verdict(raw: &str) -> Option<Verdict> {
    let trimmed = raw.trim();
    let (head, rest) = match trimmed.split_once(char::is_whitespace) {
        Some((h, r)) => (h, r.trim()),
        None => (trimmed, ""),
    };
    match head.to_ascii_uppercase().as_str() {
        "KEEP" => Some(Verdict::Keep {
            detail: rest.to_owned(),
        }),
        "DROP" if !rest.is_empty() => Some(Verdict::Drop {
            reason: rest.to_owned(),
        }),
        _ => None,
    }
}

/// Deterministic offline judge.
///
/// Rules, in order:
/// 1. at least `min_tokens_for_ratio` tokens and a type-token ratio over the
///    first `ratio_window` tokens below `min_type_token_ratio` → `DROP low-quality`
/// 2. any allowlisted topic occurring inside a title/body token → `KEEP topic=<t>`
/// 3. otherwise → `DROP off-topic`
#[derive(Debug, Clone)]
pub struct StubJudge {
    pub topics: Vec<String>,
    pub min_type_token_ratio: f64,
    pub ratio_window: usize,
    pub min_tokens_for_ratio: usize,
}

impl StubJudge {
    pub fn new<I, S>(topics: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut topics: Vec<String> = topics
            .into_iter()
            .map(|t| t.into().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        topics.sort();
        topics.dedup();
        Self {
            topics,
            min_type_token_ratio: 0.3,
            ratio_window: 200,
            min_tokens_for_ratio: 20,
        }
    }

    /// Topic list covering common telecom vocabulary.
    pub fn telecom_default() -> Self {
        Self::new([
            "3gpp", "5g", "lte", "ieee", "wireless", "radio", "network", "protocol", "coding",
            "modulation", "antenna", "mimo", "ofdm", "signal", "channel", "spectrum", "communication",
            "telecom", "amf", "smf", "upf", "gnb", "handover", "session", "bearer", "beam",
            "frequency", "transmission", "wifi", "core", "ran",
        ])
    }
}

pub fn type_token_ratio(tokens: &[String]) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let distinct: std::collections::HashSet<&String> = tokens.iter().collect();
    distinct.len() as f64 / tokens.len() as f64
}

impl JudgeClient for StubJudge {
    fn name(&self) -> &str {
        "stub-judge"
    }

    fn judge(&self, title: &str, body: &str) -> Result<String, ClientError> {
        let body_tokens = tokens_lower(body);
        if body_tokens.len() >= self.min_tokens_for_ratio {
            let window = &body_tokens[..body_tokens.len().min(self.ratio_window)];
            if type_token_ratio(window) < self.min_type_token_ratio {
                return Ok("DROP low-quality".to_owned());
            }
        }
        let title_tokens = tokens_lower(title);
        let hit = self.topics.iter().find(|topic| {
            title_tokens
                .iter()
                .chain(&body_tokens)
                .any(|tok| tok.contains(topic.as_str()))
        });
        Ok(match hit {
            Some(topic) => format!("KEEP topic={topic}"),
            None => "DROP off-topic".to_owned(),
        })
    }
}
