use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::corpus::{CleanDocument, RawDocument, SourceKind};
use crate::embed::{test_embedder, ChunkPolicy, HashedTrigramEmbedder};
use crate::grg::{build_stores, EngineConfig, GenerationRequest, GenerationResponse, GeneratorClient, MockGenerator, MockRule};
use crate::kgraph::PatternExtractor;
use crate::vindex::IndexMode;

fn doc(id: &str, body: &str) -> CleanDocument {
    CleanDocument::from_raw(RawDocument {
        doc_id: id.into(),
        source_kind: SourceKind::Other,
        title: String::new(),
        body: body.into(),
        attachments: vec![],
        meta: Default::default(),
    })
}

fn engine(docs: &[CleanDocument], generator: impl GeneratorClient + 'static) -> Engine<f32> {
    let embedder: HashedTrigramEmbedder<f32> = test_embedder(256).unwrap();
    let stores = build_stores(docs, &ChunkPolicy::default(), &embedder, IndexMode::Exact, &PatternExtractor::default()).unwrap();
    Engine {
        embedder: Arc::new(embedder),
        index: Arc::new(stores.index),
        chunks: Arc::new(stores.chunks),
        graph: Arc::new(stores.graph),
        extractor: Arc::new(PatternExtractor::default()),
        generator: Arc::new(generator),
        captioner: None,
        ocr: None,
        config: EngineConfig::default(),
    }
}

fn question(qid: &str, stem: &str, key: &str, difficulty: Difficulty) -> McqQuestion {
    McqQuestion {
        qid: qid.into(),
        stem: stem.into(),
        options: ["A", "B", "C", "D"]
            .iter()
            .map(|l| McqOption {
                label: l.to_string(),
                text: format!("option {}", l.to_lowercase()),
            })
            .collect(),
        answer_key: key.into(),
        difficulty,
    }
}

fn rule(trigger: &str, needle: &str, answer: &str) -> MockRule {
    MockRule {
        trigger: Some(trigger.into()),
        needle: needle.into(),
        answer: answer.into(),
    }
}

const WELL_FORMED: &str = r#"{"qid":"q1","stem":"Which layer segments SDUs?","options":[{"label":"A","text":"RLC"},{"label":"B","text":"PHY"}],"answer_key":"A","difficulty":"easy"}
{"qid":"q2","stem":"Which function selects the SMF?","options":[{"label":"A","text":"AMF"},{"label":"B","text":"UPF"},{"label":"C","text":"NRF"}],"answer_key":"A","difficulty":"intermediate"}

{"qid":"q3","stem":"Max MIMO layers?","options":[{"label":"A","text":"2"},{"label":"B","text":"4"},{"label":"C","text":"8"},{"label":"D","text":"16"}],"answer_key":"C","difficulty":"hard"}
"#;

#[test]
fn loads_well_formed_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.jsonl");
    std::fs::write(&path, WELL_FORMED).unwrap();
    let b = load_benchmark(&path).unwrap();
    assert_eq!(b.questions.len(), 3);
    assert!(b.rejected.is_empty());
    assert!(matches!(load_benchmark(&dir.path().join("missing")), Err(EvalError::Io { .. })));
}

#[test]
fn rejects_rows_with_line_numbers() {
    let text = format!(
        "{}\n{}\n{}\nnot json\n",
        r#"{"qid":"q1","stem":"s","options":[{"label":"A","text":"x"},{"label":"B","text":"y"}],"answer_key":"A","difficulty":"easy"}"#,
        r#"{"qid":"q2","stem":"s","options":[{"label":"A","text":"x"},{"label":"B","text":"y"}],"difficulty":"easy"}"#,
        r#"{"qid":"q3","stem":"s","options":[{"label":"A","text":"x"}],"answer_key":"A","difficulty":"easy"}"#,
    );
    let b = parse_benchmark(&text).unwrap();
    assert_eq!(b.questions.len(), 1);
    let lines: Vec<usize> = b.rejected.iter().map(|r| r.line).collect();
    assert_eq!(lines, [2, 3, 4]);
    assert!(b.rejected[0].message.contains("answer_key"));
}

#[test]
fn duplicate_qid_is_error() {
    let text = format!("{WELL_FORMED}{}", WELL_FORMED.lines().next().unwrap());
    match parse_benchmark(&text) {
        Err(EvalError::DuplicateQid { qid, first, second }) => {
            assert_eq!((qid.as_str(), first, second), ("q1", 1, 5));
        }
        other => panic!("expected duplicate error, got {other:?}"),
    }
    assert!(matches!(parse_benchmark("\n"), Err(EvalError::NoQuestions { .. })));
}

#[test]
fn question_validation() {
    let mut q = question("q", "s", "A", Difficulty::Easy);
    assert!(q.validate().is_ok());
    q.options[1].label = "A".into();
    assert!(q.validate().unwrap_err().contains("repeated"));
    q.options[1].label = "G".into();
    assert!(q.validate().is_err());
    q.options[1].label = "E".into();
    assert!(q.validate().is_ok());
    q.answer_key = "B".into();
    assert!(q.validate().is_err());
}

#[test]
fn choice_parsing() {
    let labels = ["A", "B", "C", "D"];
    assert_eq!(parse_choice("The answer is B.", &labels).as_deref(), Some("B"));
    assert_eq!(parse_choice("b) because of the timer", &labels).as_deref(), Some("B"));
    assert_eq!(parse_choice("none of these", &labels), None);
    assert_eq!(parse_choice("Option E", &labels), None);
    assert_eq!(parse_choice(crate::grg::MOCK_FALLBACK, &["A", "B", "C", "D", "E", "F"]), None);
    assert_eq!(parse_choice("BA, then C", &labels).as_deref(), Some("C"));
}

#[test]
fn render_embeds_options() {
    let q = question("q", "Which?", "A", Difficulty::Easy);
    assert_eq!(q.render(), "Which?\nA) option a\nB) option b\nC) option c\nD) option d");
}

#[test]
fn needles_in_stem_score_one_in_every_mode() {
    let qs: Vec<McqQuestion> = (0..5)
        .map(|i| question(&format!("q{i}"), &format!("Stem {i} says key NEEDLE{i} means B."), "B", Difficulty::Easy))
        .collect();
    let gen = MockGenerator {
        rules: qs.iter().enumerate().map(|(i, q)| rule(&q.stem, &format!("NEEDLE{i}"), "The answer is B.")).collect(),
    };
    let e = engine(&[doc("d", "The AMF selects the SMF in 5G.")], gen);
    for mode in Mode::ALL {
        assert_eq!(run_eval(&qs, &e, mode).accuracy, 1.0);
    }
}

#[test]
fn retrieval_and_graph_tiers_flip_exactly() {
    let mut docs = Vec::new();
    let mut qs = Vec::new();
    let mut rules = Vec::new();
    let things = ["segmentation offset", "duplication bit", "preemption flag", "headroom report", "comb pattern", "grant timer"];
    for (i, t) in things.iter().enumerate() {
        let code = format!("CX-{}", 1000 + i);
        docs.push(doc(&format!("r{i}"), &format!("In the profile the {t} is configured with code {code}.")));
        let q = question(&format!("r{i}"), &format!("Which code configures the {t} in the profile?"), "C", Difficulty::Intermediate);
        rules.push(rule(&q.stem, &format!("{t} is configured with code {code}"), "The answer is C."));
        qs.push(q);
    }
    let entities = [("Kestrel relay", "anchors", "anchor", "Zephyr tunnel"), ("Harbor unit", "selects", "select", "Juniper gateway"), ("Lumen scheduler", "allocates", "allocate", "Saffron carrier"), ("Vesper node", "hosts", "host", "Tundra function")];
    for (i, (s, v, base, o)) in entities.iter().enumerate() {
        docs.push(doc(&format!("g{i}"), &format!("The {s} {v} the {o}.")));
        let q = question(&format!("g{i}"), &format!("Which element does the {s} {base}?"), "D", Difficulty::Hard);
        rules.push(rule(&q.stem, &format!("{s} —{v}→ {o}"), "The answer is D."));
        qs.push(q);
    }
    let e = engine(&docs, MockGenerator { rules });
    let base = run_eval(&qs, &e, Mode::Base);
    let rag = run_eval(&qs, &e, Mode::Rag);
    let grg = run_eval(&qs, &e, Mode::Grg);
    assert_eq!((base.correct, rag.correct, grg.correct), (0, 6, 10));
    let flipped: Vec<&str> = rag
        .transcript
        .iter()
        .zip(&grg.transcript)
        .filter(|(r, g)| !r.correct && g.correct)
        .map(|(r, _)| r.qid.as_str())
        .collect();
    assert_eq!(flipped, ["g0", "g1", "g2", "g3"]);
    assert_eq!(grg, run_eval(&qs, &e, Mode::Grg));
    assert!(base.transcript.iter().all(|r| r.chosen.is_none() && r.context_chars == 0));
}

struct Failing;

impl GeneratorClient for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, crate::client::ClientError> {
        Err(crate::client::ClientError::transport("failing", "reset"))
    }
}

#[test]
fn generator_failures_count_as_abstain() {
    let e = engine(&[doc("d", "The AMF selects the SMF in 5G.")], Failing);
    let r = run_eval(&[question("q", "Which?", "A", Difficulty::Easy)], &e, Mode::Rag);
    assert_eq!((r.total, r.correct), (1, 0));
    assert!(r.transcript[0].error.is_some());
}

#[test]
fn summary_table_layout() {
    let r = EvalReport::from_transcript(
        Mode::Rag,
        vec![QuestionResult {
            qid: "q".into(),
            difficulty: Difficulty::Hard,
            chosen: Some("A".into()),
            correct: true,
            context_chars: 10,
            error: None,
        }],
    );
    assert_eq!(
        r.summary_table(),
        "mode: rag\ndifficulty      total  correct  accuracy\nhard                1        1    1.0000\noverall             1        1    1.0000\n"
    );
    let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

proptest! {
    #[test]
    fn report_arithmetic(rows in prop::collection::vec((0usize..3, any::<bool>()), 1..60)) {
        let tiers = [Difficulty::Easy, Difficulty::Intermediate, Difficulty::Hard];
        let transcript = rows
            .iter()
            .enumerate()
            .map(|(i, (d, ok))| QuestionResult {
                qid: format!("q{i:03}"),
                difficulty: tiers[*d],
                chosen: ok.then(|| "A".to_string()),
                correct: *ok,
                context_chars: 0,
                error: None,
            })
            .collect();
        let r = EvalReport::from_transcript(Mode::Grg, transcript);
        prop_assert_eq!(r.per_difficulty.values().map(|t| t.total).sum::<usize>(), r.total);
        prop_assert_eq!(r.per_difficulty.values().map(|t| t.correct).sum::<usize>(), r.correct);
        let recombined: f64 = r.per_difficulty.values().map(|t| t.accuracy * t.total as f64).sum::<f64>() / r.total as f64;
        prop_assert!((recombined - r.accuracy).abs() < 1e-12);
        prop_assert_eq!(r.accuracy, r.correct as f64 / r.total as f64);
    }
}
