use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::corpus::CleanDocument;

/// A contiguous char span `[start, end)` of a document body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub span: (usize, usize),
    pub text: String,
}

impl Chunk {
    pub fn ordinal(&self) -> Option<usize> {
        self.chunk_id.rsplit_once('#')?.1.parse().ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPolicy {
    pub target_chars: usize,
    pub overlap_chars: usize,
    /// How far back a split point may move to land after whitespace.
    #[serde(default = "default_snap")]
    pub snap_window: usize,
}

fn default_snap() -> usize {
    40
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            target_chars: 1200,
            overlap_chars: 200,
            snap_window: 40,
        }
    }
}

impl ChunkPolicy {
    pub fn new(target_chars: usize, overlap_chars: usize) -> Result<Self, EmbedError> {
        let policy = Self {
            target_chars,
            overlap_chars,
            snap_window: default_snap(),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.target_chars <= self.overlap_chars {
            return Err(EmbedError::Policy(format!(
                "target_chars ({}) must exceed overlap_chars ({})",
                self.target_chars, self.overlap_chars
            )));
        }
        Ok(())
    }
}

/// Char spans covering `body`. Consecutive spans overlap by exactly
/// `overlap_chars`; each split point is moved back to just after the nearest
/// whitespace within `snap_window` chars, or left as a hard split.
pub fn chunk_spans(body: &str, policy: &ChunkPolicy) -> Result<Vec<(usize, usize)>, EmbedError> {
    policy.validate()?;
    let chars: Vec<char> = body.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    if n == 0 {
        return Ok(spans);
    }
    let mut start = 0;
    loop {
        if n - start <= policy.target_chars {
            spans.push((start, n));
            return Ok(spans);
        }
        let hard = start + policy.target_chars;
        // The next chunk must start strictly after this one did.
        let lowest = hard
            .saturating_sub(policy.snap_window)
            .max(start + policy.overlap_chars + 1);
        let end = (lowest..=hard)
            .rev()
            .find(|&p| chars[p - 1].is_whitespace())
            .unwrap_or(hard);
        spans.push((start, end));
        start = end - policy.overlap_chars;
    }
}

pub fn chunk_text(doc_id: &str, body: &str, policy: &ChunkPolicy) -> Result<Vec<Chunk>, EmbedError> {
    let spans = chunk_spans(body, policy)?;
    let offsets: Vec<usize> = body
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(body.len()))
        .collect();
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(ordinal, (s, e))| Chunk {
            chunk_id: format!("{doc_id}#{ordinal}"),
            doc_id: doc_id.to_owned(),
            span: (s, e),
            text: body[offsets[s]..offsets[e]].to_owned(),
        })
        .collect())
}

pub fn chunk_document(doc: &CleanDocument, policy: &ChunkPolicy) -> Result<Vec<Chunk>, EmbedError> {
    chunk_text(&doc.doc_id, &doc.body, policy)
}

/// Concatenate chunks, dropping the leading `overlap_chars` of every chunk
/// after the first.
pub fn reconstruct(chunks: &[Chunk], overlap_chars: usize) -> String {
    let mut out = String::new();
    for (i, c) in chunks.iter().enumerate() {
        if i == 0 {
            out.push_str(&c.text);
        } else {
            out.extend(c.text.chars().skip(overlap_chars));
        }
    }
    out
}
