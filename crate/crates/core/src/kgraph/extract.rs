//! Extraction contract and the offline verb-pattern stub.

use serde::{Deserialize, Serialize};

use crate::client::{with_retries, ClientError};
use crate::embed::Chunk;
use crate::text::sentences;

/// Triple as reported by a backend, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTriple {
    pub subject: String,
    #[serde(default = "default_type")]
    pub subject_type: String,
    pub predicate: String,
    pub object: String,
    #[serde(default = "default_type")]
    pub object_type: String,
    pub confidence: f64,
}

/// Entity mention as reported by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMention {
    pub surface: String,
    #[serde(default = "default_type")]
    pub type_hint: String,
}

fn default_type() -> String {
    "entity".to_owned()
}

/// Entity/relation extraction backend. The same contract serves document
/// chunks (`extract`) and user queries (`mentions`).
pub trait ExtractorClient: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, text: &str) -> Result<Vec<RawTriple>, ClientError>;
    fn mentions(&self, text: &str) -> Result<Vec<RawMention>, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub type_hint: String,
    pub chunk_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityMention,
    pub predicate: String,
    pub object: EntityMention,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub triples: Vec<Triple>,
    /// Malformed backend triples that were dropped.
    pub warnings: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("chunk {chunk_id} left unextracted: {source}")]
pub struct Unextracted {
    pub chunk_id: String,
    #[source]
    pub source: ClientError,
}

/// Run the extractor on one chunk, retrying transient failures, and keep
/// only well-formed triples (non-empty surfaces and predicate, confidence
/// in `[0, 1]`).
pub fn extract_triples(
    chunk: &Chunk,
    extractor: &dyn ExtractorClient,
    attempts: usize,
) -> Result<Extraction, Unextracted> {
    let raw = with_retries(attempts, || extractor.extract(&chunk.text)).map_err(|source| Unextracted {
        chunk_id: chunk.chunk_id.clone(),
        source,
    })?;
    let mut out = Extraction::default();
    for t in raw {
        let (s, p, o) = (t.subject.trim(), t.predicate.trim(), t.object.trim());
        let valid = !s.is_empty()
            && !p.is_empty()
            && !o.is_empty()
            && t.confidence.is_finite()
            && (0.0..=1.0).contains(&t.confidence);
        if !valid {
            out.warnings += 1;
            continue;
        }
        let mention = |surface: &str, ty: &str| EntityMention {
            surface: surface.to_owned(),
            type_hint: if ty.trim().is_empty() { default_type() } else { ty.trim().to_owned() },
            chunk_id: chunk.chunk_id.clone(),
        };
        out.triples.push(Triple {
            subject: mention(s, &t.subject_type),
            predicate: p.to_lowercase(),
            object: mention(o, &t.object_type),
            confidence: t.confidence,
        });
    }
    Ok(out)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "between", "by", "can", "could", "did", "do", "does", "during", "each", "for",
    "from", "had", "has", "have", "here", "how", "if", "in", "into", "is", "it", "its", "may",
    "might", "no", "not", "of", "on", "only", "or", "over", "per", "should", "so", "some", "such",
    "than", "that", "the", "their", "then", "there", "these", "this", "those", "to", "under",
    "via", "was", "were", "what", "when", "where", "which", "while", "who", "why", "will", "with",
    "would",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token.to_lowercase().as_str()).is_ok()
}

/// A sentence token with leading/trailing punctuation removed; `breaks_after`
/// marks clause punctuation (`,;:()`) directly after it.
#[derive(Debug, Clone)]
struct Tok<'a> {
    text: &'a str,
    breaks_before: bool,
    breaks_after: bool,
}

fn sentence_tokens(sentence: &str) -> Vec<Tok<'_>> {
    sentence
        .split_whitespace()
        .filter_map(|raw| {
            let is_punct = |c: char| !c.is_alphanumeric();
            let text = raw.trim_matches(is_punct);
            if text.is_empty() {
                return None;
            }
            let start = raw.find(text).unwrap_or(0);
            let lead = &raw[..start];
            let trail = &raw[start + text.len()..];
            let clause = |s: &str| s.chars().any(|c| ",;:()[]\"".contains(c));
            Some(Tok {
                text,
                breaks_before: clause(lead),
                breaks_after: clause(trail),
            })
        })
        .collect()
}

/// Deterministic extractor: for each sentence and each configured verb, the
/// run of content words right before the verb is the subject and the run
/// right after it is the object. Query mentions are every 1..=4-word n-gram
/// of content-word runs.
#[derive(Debug, Clone)]
pub struct PatternExtractor {
    /// (verb as written in text, predicate name)
    pub rules: Vec<(String, String)>,
    pub max_mention_words: usize,
}

impl Default for PatternExtractor {
    fn default() -> Self {
        let verbs = [
            "selects", "controls", "uses", "supports", "manages", "contains", "includes", "hosts",
            "terminates", "serves", "configures", "allocates", "forwards", "triggers", "requests",
            "sends", "receives", "anchors", "connects", "provides", "carries", "maps", "schedules",
            "authenticates", "stores", "exposes", "queries", "notifies", "encodes", "decodes",
        ];
        Self::new(verbs.iter().map(|v| (v.to_string(), v.to_string())))
    }
}

impl PatternExtractor {
    pub fn new(rules: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            rules: rules.into_iter().collect(),
            max_mention_words: 4,
        }
    }

    fn triples_in(&self, sentence: &str) -> Vec<RawTriple> {
        let toks = sentence_tokens(sentence);
        let mut out = Vec::new();
        for (vi, tok) in toks.iter().enumerate() {
            let Some((_, predicate)) = self
                .rules
                .iter()
                .find(|(verb, _)| verb.eq_ignore_ascii_case(tok.text))
            else {
                continue;
            };
            let mut subj = Vec::new();
            for j in (0..vi).rev() {
                let t = &toks[j];
                if is_stopword(t.text) || t.breaks_after || (j + 1 < vi && toks[j + 1].breaks_before) {
                    break;
                }
                subj.push(t.text);
                if t.breaks_before {
                    break;
                }
            }
            subj.reverse();
            let mut k = vi + 1;
            while k < toks.len() && is_stopword(toks[k].text) && !toks[k].breaks_after {
                k += 1;
            }
            let mut obj = Vec::new();
            if !tok.breaks_after {
                while k < toks.len() && !is_stopword(toks[k].text) {
                    if !obj.is_empty() && toks[k].breaks_before {
                        break;
                    }
                    obj.push(toks[k].text);
                    if toks[k].breaks_after {
                        break;
                    }
                    k += 1;
                }
            }
            if !subj.is_empty() && !obj.is_empty() {
                out.push(RawTriple {
                    subject: subj.join(" "),
                    subject_type: default_type(),
                    predicate: predicate.clone(),
                    object: obj.join(" "),
                    object_type: default_type(),
                    confidence: 1.0,
                });
            }
        }
        out
    }
}

impl ExtractorClient for PatternExtractor {
    fn name(&self) -> &str {
        "pattern-stub"
    }

    fn extract(&self, text: &str) -> Result<Vec<RawTriple>, ClientError> {
        Ok(sentences(text).into_iter().flat_map(|s| self.triples_in(s)).collect())
    }

    fn mentions(&self, text: &str) -> Result<Vec<RawMention>, ClientError> {
        let mut out = Vec::new();
        for sentence in sentences(text) {
            let toks = sentence_tokens(sentence);
            let mut runs: Vec<Vec<&str>> = vec![Vec::new()];
            for t in &toks {
                if t.breaks_before && !runs.last().expect("non-empty").is_empty() {
                    runs.push(Vec::new());
                }
                if is_stopword(t.text) {
                    runs.push(Vec::new());
                    continue;
                }
                runs.last_mut().expect("non-empty").push(t.text);
                if t.breaks_after {
                    runs.push(Vec::new());
                }
            }
            for run in runs.iter().filter(|r| !r.is_empty()) {
                for start in 0..run.len() {
                    for len in 1..=self.max_mention_words.min(run.len() - start) {
                        out.push(RawMention {
                            surface: run[start..start + len].join(" "),
                            type_hint: default_type(),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            chunk_id: "d#0".into(),
            doc_id: "d".into(),
            span: (0, text.chars().count()),
            text: text.into(),
        }
    }

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn selects_rule_fires() {
        let c = chunk("The AMF selects the SMF during PDU session establishment.");
        let ex = extract_triples(&c, &PatternExtractor::default(), 1).unwrap();
        assert_eq!(ex.warnings, 0);
        assert_eq!(ex.triples.len(), 1);
        let t = &ex.triples[0];
        assert_eq!(
            (t.subject.surface.as_str(), t.predicate.as_str(), t.object.surface.as_str(), t.confidence),
            ("AMF", "selects", "SMF", 1.0)
        );
        assert_eq!(t.subject.chunk_id, "d#0");
    }

    #[test]
    fn no_pattern_no_triples() {
        let c = chunk("Fresh pasta needs flour and eggs.");
        assert!(extract_triples(&c, &PatternExtractor::default(), 1).unwrap().triples.is_empty());
    }

    #[test]
    fn multiword_entities_and_clause_breaks() {
        let ex = PatternExtractor::default();
        let t = ex.extract("In 5G, the PDU session anchor UPF forwards user plane packets to the data network.").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].subject, "PDU session anchor UPF");
        assert_eq!(t[0].object, "user plane packets");

        let t = ex.extract("The gNB hosts RRC, and terminates Xn.").unwrap();
        assert_eq!(t[0].subject, "gNB");
        assert_eq!(t[0].object, "RRC");
        // "and" is a stopword, so "terminates" has no subject
        assert_eq!(t.len(), 1);
    }

    struct Scripted(Vec<RawTriple>);

    impl ExtractorClient for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn extract(&self, _: &str) -> Result<Vec<RawTriple>, ClientError> {
            Ok(self.0.clone())
        }
        fn mentions(&self, _: &str) -> Result<Vec<RawMention>, ClientError> {
            Ok(vec![])
        }
    }

    #[test]
    fn out_of_range_confidence_dropped_with_warning() {
        let good = RawTriple {
            subject: "AMF".into(),
            subject_type: "nf".into(),
            predicate: "Selects".into(),
            object: "SMF".into(),
            object_type: "nf".into(),
            confidence: 0.7,
        };
        let bad = RawTriple {
            confidence: 1.3,
            ..good.clone()
        };
        let empty = RawTriple {
            subject: " ".into(),
            ..good.clone()
        };
        let ex = extract_triples(&chunk("x"), &Scripted(vec![good, bad, empty]), 1).unwrap();
        assert_eq!(ex.triples.len(), 1);
        assert_eq!(ex.warnings, 2);
        assert_eq!(ex.triples[0].predicate, "selects");
    }

    struct Flaky;

    impl ExtractorClient for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn extract(&self, _: &str) -> Result<Vec<RawTriple>, ClientError> {
            Err(ClientError::transport("flaky", "connection reset"))
        }
        fn mentions(&self, _: &str) -> Result<Vec<RawMention>, ClientError> {
            Ok(vec![])
        }
    }

    #[test]
    fn transport_failure_marks_chunk_unextracted() {
        let err = extract_triples(&chunk("x"), &Flaky, 3).unwrap_err();
        assert_eq!(err.chunk_id, "d#0");
        assert!(err.source.is_retryable());
    }

    #[test]
    fn query_mentions_cover_content_ngrams() {
        let m = PatternExtractor::default()
            .mentions("how does the AMF select an SMF?")
            .unwrap();
        let surfaces: Vec<&str> = m.iter().map(|m| m.surface.as_str()).collect();
        assert_eq!(surfaces, vec!["AMF", "AMF select", "select", "SMF"]);
    }
}
