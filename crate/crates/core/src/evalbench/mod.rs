//! MCQ benchmarks run through the engine in base/rag/grg mode.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grg::{Engine, Mode, Query};
use crate::jsonl;
use crate::scalar::Scalar;

pub const ALLOWED_LABELS: &str = "ABCDEF";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read benchmark {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate qid {qid} (lines {first} and {second})")]
    DuplicateQid { qid: String, first: usize, second: usize },
    #[error("no valid questions ({} rejected rows)", rejected.len())]
    NoQuestions { rejected: Vec<RejectedRow> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Intermediate,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqQuestion {
    pub qid: String,
    pub stem: String,
    pub options: Vec<McqOption>,
    pub answer_key: String,
    pub difficulty: Difficulty,
}

impl McqQuestion {
    pub fn validate(&self) -> Result<(), String> {
        if self.qid.trim().is_empty() {
            return Err("qid is empty".into());
        }
        if self.stem.trim().is_empty() {
            return Err("stem is empty".into());
        }
        if !(2..=6).contains(&self.options.len()) {
            return Err(format!("{} options, expected 2 to 6", self.options.len()));
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            let ok = o.label.len() == 1 && ALLOWED_LABELS.contains(o.label.as_str());
            if !ok {
                return Err(format!("label {:?} is not one of {ALLOWED_LABELS}", o.label));
            }
            if !seen.insert(o.label.as_str()) {
                return Err(format!("label {} repeated", o.label));
            }
        }
        if !seen.contains(self.answer_key.as_str()) {
            return Err(format!("answer_key {:?} is not an option label", self.answer_key));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.label.as_str()).collect()
    }

    /// Stem, then one `X) text` line per option.
    pub fn render(&self) -> String {
        let mut s = self.stem.clone();
        for o in &self.options {
            let _ = write!(s, "\n{}) {}", o.label, o.text);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Benchmark {
    pub questions: Vec<McqQuestion>,
    pub rejected: Vec<RejectedRow>,
}

/// Parse JSON Lines text. Malformed or invalid rows are rejected with their
/// line number; a repeated qid is an error.
pub fn parse_benchmark(text: &str) -> Result<Benchmark, EvalError> {
    let mut questions = Vec::new();
    let mut rejected = Vec::new();
    let mut lines_by_qid: BTreeMap<String, usize> = BTreeMap::new();
    for (line, row) in jsonl::parse_lines::<McqQuestion>(text) {
        let q = match row.and_then(|q| q.validate().map(|()| q)) {
            Ok(q) => q,
            Err(message) => {
                rejected.push(RejectedRow { line, message });
                continue;
            }
        };
        if let Some(&first) = lines_by_qid.get(&q.qid) {
            return Err(EvalError::DuplicateQid {
                qid: q.qid,
                first,
                second: line,
            });
        }
        lines_by_qid.insert(q.qid.clone(), line);
        questions.push(q);
    }
    if questions.is_empty() {
        return Err(EvalError::NoQuestions { rejected });
    }
    Ok(Benchmark { questions, rejected })
}

pub fn load_benchmark(path: &Path) -> Result<Benchmark, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_benchmark(&text)
}

/// First single-letter word (case-insensitive) that is one of `labels`.
pub fn parse_choice(output: &str, labels: &[&str]) -> Option<String> {
    output
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() == 1)
        .map(str::to_uppercase)
        .find(|w| labels.contains(&w.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub qid: String,
    pub difficulty: Difficulty,
    pub chosen: Option<String>,
    pub correct: bool,
    pub context_chars: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl TierStats {
    fn new(total: usize, correct: usize) -> Self {
        Self {
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_difficulty: BTreeMap<Difficulty, TierStats>,
    pub transcript: Vec<QuestionResult>,
}

impl EvalReport {
    pub fn from_transcript(mode: Mode, mut transcript: Vec<QuestionResult>) -> Self {
        transcript.sort_by(|a, b| a.qid.cmp(&b.qid));
        let mut tiers: BTreeMap<Difficulty, (usize, usize)> = BTreeMap::new();
        for r in &transcript {
            let t = tiers.entry(r.difficulty).or_default();
            t.0 += 1;
            t.1 += usize::from(r.correct);
        }
        let correct = transcript.iter().filter(|r| r.correct).count();
        let overall = TierStats::new(transcript.len(), correct);
        Self {
            mode,
            total: overall.total,
            correct,
            accuracy: overall.accuracy,
            per_difficulty: tiers.into_iter().map(|(d, (t, c))| (d, TierStats::new(t, c))).collect(),
            transcript,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table, one row per difficulty plus an overall row.
    pub fn summary_table(&self) -> String {
        let mut s = format!("mode: {}\n{:<14}{:>7}{:>9}{:>10}\n", self.mode, "difficulty", "total", "correct", "accuracy");
        let mut row = |name: &str, t: &TierStats| {
            let _ = writeln!(s, "{name:<14}{:>7}{:>9}{:>10.4}", t.total, t.correct, t.accuracy);
        };
        for (d, t) in &self.per_difficulty {
            let name = serde_json::to_value(d).expect("enum serializes");
            row(name.as_str().unwrap_or_default(), t);
        }
        row("overall", &TierStats::new(self.total, self.correct));
        s
    }
}

/// Answer every question once through the engine. Failures count as
/// abstentions.
pub fn run_eval<T: Scalar>(questions: &[McqQuestion], engine: &Engine<T>, mode: Mode) -> EvalReport {
    let one = |q: &McqQuestion| {
        let (chosen, context_chars, error) = match engine.answer(&Query::text(q.render()), mode) {
            Ok(a) => (parse_choice(&a.answer, &q.labels()), a.context.total_chars, None),
            Err(e) => (None, 0, Some(e.to_string())),
        };
        QuestionResult {
            qid: q.qid.clone(),
            difficulty: q.difficulty,
            correct: chosen.as_deref() == Some(q.answer_key.as_str()),
            chosen,
            context_chars,
            error,
        }
    };
    let transcript = if engine.generator.allows_concurrent_calls() {
        questions.par_iter().map(one).collect()
    } else {
        questions.iter().map(one).collect()
    };
    EvalReport::from_transcript(mode, transcript)
}

#[cfg(test)]
mod tests;
