use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::embed::{test_embedder, HashedTrigramEmbedder};
use crate::kgraph::{build_graph, BuildOptions, PatternExtractor};
use crate::mmio::FixtureStub;
use crate::vindex::IndexMode;

fn chunk(id: &str, text: &str) -> Chunk {
    Chunk {
        chunk_id: id.into(),
        doc_id: id.split('#').next().unwrap().into(),
        span: (0, text.chars().count()),
        text: text.into(),
    }
}

fn corpus() -> Vec<Chunk> {
    vec![
        chunk("ts-38322#0", "The RLC layer performs RLC segmentation of SDUs when the grant is small."),
        chunk("ts-23501#0", "The AMF selects the SMF during PDU session establishment."),
        chunk("ts-23501#1", "The SMF controls the UPF for user plane traffic."),
        chunk("ts-38300#0", "The gNB hosts radio resource control and schedules uplink grants."),
        chunk("ieee-80211#0", "The AP schedules stations with OFDMA resource units."),
        chunk("ts-36213#0", "Power headroom reports are sent by the terminal."),
    ]
}

fn engine(chunks: Vec<Chunk>, generator: MockGenerator) -> Engine<f32> {
    let embedder: HashedTrigramEmbedder<f32> = test_embedder(256).unwrap();
    let pairs = chunks
        .iter()
        .map(|c| (c.chunk_id.clone(), embed_text(&c.text, &embedder).unwrap()))
        .collect();
    let index = VectorIndex::build(pairs, IndexMode::Exact).unwrap();
    let graph = build_graph(&chunks, &PatternExtractor::default(), &BuildOptions::default()).unwrap().graph;
    let stub = Arc::new(FixtureStub::load(std::path::Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/images/table.json"
    )))
    .unwrap());
    Engine {
        embedder: Arc::new(embedder),
        index: Arc::new(index),
        chunks: Arc::new(ChunkStore::new(chunks)),
        graph: Arc::new(graph),
        extractor: Arc::new(PatternExtractor::default()),
        generator: Arc::new(generator),
        captioner: Some(stub.clone()),
        ocr: Some(stub),
        config: EngineConfig::default(),
    }
}

fn cosine_oracle(embedder: &HashedTrigramEmbedder<f32>, a: &str, b: &str) -> f64 {
    let (x, y) = (embedder.counts(a), embedder.counts(b));
    let dot: f64 = x.iter().zip(&y).map(|(p, q)| *p as f64 * *q as f64).sum();
    let n = |v: &[u32]| v.iter().map(|p| (*p as f64).powi(2)).sum::<f64>().sqrt();
    dot / (n(&x) * n(&y))
}

#[test]
fn local_retrieval_matches_brute_force_cosine() {
    let e = engine(corpus(), MockGenerator::default());
    let query = "RLC segmentation";
    let local = retrieve_local(query, e.embedder.as_ref(), &e.index, &e.chunks, 1).unwrap();
    let embedder: HashedTrigramEmbedder<f32> = test_embedder(256).unwrap();
    let best = corpus()
        .into_iter()
        .max_by(|a, b| cosine_oracle(&embedder, query, &a.text).total_cmp(&cosine_oracle(&embedder, query, &b.text)))
        .unwrap();
    assert_eq!(best.chunk_id, "ts-38322#0");
    assert_eq!(local.hits.len(), 1);
    assert_eq!(local.hits[0].chunk_id, best.chunk_id);
    assert_eq!(local.hits[0].rank, 1);
    assert!((local.hits[0].score - cosine_oracle(&embedder, query, &best.text)).abs() < 1e-5);
    assert_eq!(local.texts[&best.chunk_id], best.text);
}

#[test]
fn local_retrieval_edges() {
    let e = engine(corpus(), MockGenerator::default());
    let all = retrieve_local("anything", e.embedder.as_ref(), &e.index, &e.chunks, 50).unwrap();
    assert_eq!(all.hits.len(), 6);
    assert_eq!(all.texts.len(), 6);
    assert!(matches!(
        retrieve_local("  ", e.embedder.as_ref(), &e.index, &e.chunks, 3),
        Err(GrgError::EmptyQuery)
    ));
    assert!(matches!(
        retrieve_local("x", e.embedder.as_ref(), &e.index, &e.chunks, 0),
        Err(GrgError::ZeroK)
    ));
    let missing = ChunkStore::new(corpus().into_iter().skip(1));
    assert!(matches!(
        retrieve_local("RLC segmentation", e.embedder.as_ref(), &e.index, &missing, 1),
        Err(GrgError::MissingChunk(_))
    ));
}

#[test]
fn query_entities_resolve_by_normalization() {
    let e = engine(corpus(), MockGenerator::default());
    let got = extract_query_entities("how does the AMF select an SMF?", &PatternExtractor::default(), &e.graph);
    let names: Vec<&str> = got.entity_ids.iter().map(|id| e.graph.entity(id).unwrap().canonical_name.as_str()).collect();
    assert_eq!(names, ["AMF", "SMF"]);

    let lower = extract_query_entities("amf", &PatternExtractor::default(), &e.graph);
    assert_eq!(e.graph.entity(&lower.entity_ids[0]).unwrap().canonical_name, "AMF");

    let none = extract_query_entities("fresh pasta recipe", &PatternExtractor::default(), &e.graph);
    assert!(none.entity_ids.is_empty());
    assert!(none.notices.iter().any(|n| n.contains("no query entities")));
}

#[test]
fn global_facts_by_depth() {
    let e = engine(corpus(), MockGenerator::default());
    let amf = e.graph.resolve("AMF").unwrap().entity_id.clone();
    let d1 = retrieve_global(std::slice::from_ref(&amf), &e.graph, 1).unwrap();
    assert_eq!(d1.facts, ["AMF —selects→ SMF [source: ts-23501#0]"]);
    let d2 = retrieve_global(&[amf], &e.graph, 2).unwrap();
    let mut expected: Vec<(&str, String)> = e
        .graph
        .relations()
        .iter()
        .filter(|r| r.predicate == "selects" || r.predicate == "controls")
        .map(|r| (r.subject_id.as_str(), render_fact(&e.graph, r)))
        .collect();
    expected.sort();
    assert_eq!(expected.len(), 2);
    assert_eq!(d2.facts, expected.into_iter().map(|(_, f)| f).collect::<Vec<_>>());
    assert!(d2.facts.contains(&"SMF —controls→ UPF [source: ts-23501#1]".to_string()));
    assert!(retrieve_global(&[], &e.graph, 1).unwrap().facts.is_empty());
}

#[test]
fn global_facts_match_bfs_oracle_on_random_graph() {
    use rand::{Rng, SeedableRng};
    use std::collections::{BTreeMap, BTreeSet, VecDeque};

    use crate::kgraph::{Entity, Relation};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let ent = |i: usize| Entity {
        entity_id: format!("n{i:02}"),
        canonical_name: format!("N{i}"),
        entity_type: "entity".into(),
        aliases: [format!("N{i}")].into(),
        provenance: ["c#0".to_string()].into(),
    };
    let mut rels = BTreeMap::new();
    while rels.len() < 70 {
        let (s, o) = (rng.gen_range(0..50usize), rng.gen_range(0..50usize));
        if s != o {
            rels.insert((s, o), Relation {
                subject_id: format!("n{s:02}"),
                predicate: "links".into(),
                object_id: format!("n{o:02}"),
                confidence: 1.0,
                provenance: ["c#0".to_string()].into(),
            });
        }
    }
    let g = KnowledgeGraph::from_parts((0..50).map(ent).collect(), rels.into_values().collect()).unwrap();
    for seed in [0usize, 13, 27, 49] {
        let start = format!("n{seed:02}");
        let mut dist = BTreeMap::from([(start.clone(), 0usize)]);
        let mut q = VecDeque::from([start.clone()]);
        while let Some(v) = q.pop_front() {
            if dist[&v] == 2 {
                continue;
            }
            for r in g.relations() {
                let next = if r.subject_id == v { &r.object_id } else if r.object_id == v { &r.subject_id } else { continue };
                if !dist.contains_key(next) {
                    dist.insert(next.clone(), dist[&v] + 1);
                    q.push_back(next.clone());
                }
            }
        }
        let oracle: BTreeSet<String> = g
            .relations()
            .iter()
            .filter(|r| dist.contains_key(&r.subject_id) && dist.contains_key(&r.object_id))
            .map(|r| render_fact(&g, r))
            .collect();
        let got = retrieve_global(&[start], &g, 2).unwrap();
        assert_eq!(got.facts.iter().cloned().collect::<BTreeSet<_>>(), oracle);
        assert_eq!(got.facts.len(), oracle.len());
    }
}

fn local_of(sizes: &[usize]) -> LocalContext {
    let mut local = LocalContext::default();
    for (i, &n) in sizes.iter().enumerate() {
        let id = format!("c{i}#0");
        local.hits.push(SearchHit {
            chunk_id: id.clone(),
            score: 1.0 - i as f64 * 0.01,
            rank: i + 1,
        });
        local.texts.insert(id, "x".repeat(n));
    }
    local
}

fn global_of(sizes: &[usize]) -> GlobalContext {
    GlobalContext {
        facts: sizes.iter().map(|&n| "f".repeat(n)).collect(),
        ..Default::default()
    }
}

#[test]
fn assemble_fits_without_drops() {
    let ctx = assemble_context(&local_of(&[50, 40]), &global_of(&[20]), 1000, true).unwrap();
    assert!(ctx.truncation_report.is_empty());
    assert_eq!(ctx.blocks.len(), 3);
    assert!(matches!(ctx.blocks[0], ContextBlock::Facts { .. }));
    assert_eq!(ctx.chunk_ids(), ["c0#0", "c1#0"]);
    assert_eq!(ctx.total_chars, ctx.render().chars().count());

    let chunks_first = assemble_context(&local_of(&[50, 40]), &global_of(&[20]), 1000, false).unwrap();
    assert!(matches!(chunks_first.blocks[2], ContextBlock::Facts { .. }));
}

#[test]
fn assemble_drops_lowest_rank_chunk_first() {
    // facts block 12+1+20 = 33; chunk blocks 14+1+100 = 115 each; separators 2
    let ctx = assemble_context(&local_of(&[100, 100, 100]), &global_of(&[20]), 300, true).unwrap();
    assert_eq!(ctx.chunk_ids(), ["c0#0", "c1#0"]);
    assert_eq!(ctx.total_chars, 33 + 2 + 115 + 2 + 115);
    assert_eq!(
        ctx.truncation_report,
        [Dropped::Chunk {
            chunk_id: "c2#0".into(),
            rank: 3,
            chars: 115
        }]
    );
}

#[test]
fn assemble_truncates_facts_last_and_errors_when_hopeless() {
    let ctx = assemble_context(&local_of(&[300]), &global_of(&[100, 100, 100]), 256, true).unwrap();
    assert!(ctx.chunk_ids().is_empty());
    assert_eq!(ctx.facts().len(), 2);
    assert_eq!(ctx.truncation_report.len(), 2);
    assert!(matches!(ctx.truncation_report[0], Dropped::Chunk { .. }));
    assert!(matches!(ctx.truncation_report[1], Dropped::Fact { .. }));

    assert!(matches!(
        assemble_context(&local_of(&[]), &global_of(&[400]), 256, true),
        Err(GrgError::BudgetTooSmall { .. })
    ));
    assert!(matches!(
        assemble_context(&local_of(&[]), &global_of(&[]), 255, true),
        Err(GrgError::BudgetBelowMinimum(255))
    ));
    let empty = assemble_context(&local_of(&[1000]), &global_of(&[]), 256, true).unwrap();
    assert!(empty.is_empty());
}

proptest! {
    #[test]
    fn assembled_context_never_exceeds_budget(
        chunks in prop::collection::vec(0usize..800, 0..12),
        facts in prop::collection::vec(1usize..200, 0..12),
        budget in 256usize..4000,
        facts_first in any::<bool>(),
    ) {
        match assemble_context(&local_of(&chunks), &global_of(&facts), budget, facts_first) {
            Ok(ctx) => {
                prop_assert!(ctx.total_chars <= budget);
                prop_assert_eq!(ctx.total_chars, ctx.render().chars().count());
                let kept = ctx.chunk_ids().len();
                prop_assert_eq!(kept + ctx.truncation_report.iter().filter(|d| matches!(d, Dropped::Chunk { .. })).count(), chunks.len());
                let expected: Vec<String> = (0..kept).map(|i| format!("c{i}#0")).collect();
                prop_assert_eq!(ctx.chunk_ids(), expected.iter().map(String::as_str).collect::<Vec<_>>());
                if ctx.truncation_report.iter().any(|d| matches!(d, Dropped::Fact { .. })) {
                    prop_assert_eq!(kept, 0);
                }
            }
            Err(GrgError::BudgetTooSmall { .. }) => {
                prop_assert!(FACTS_HEADER.len() + 1 + facts[0] > budget);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

fn two_hop_generator() -> MockGenerator {
    MockGenerator::new([("AMF —selects→ SMF".to_string(), "The answer is C.".to_string())])
}

#[test]
fn base_mode_has_empty_context() {
    let e = engine(corpus(), two_hop_generator());
    let a = e.answer(&Query::text("Which function does the AMF select?"), Mode::Base).unwrap();
    assert!(a.context.is_empty());
    assert_eq!(a.answer, MOCK_FALLBACK);
    assert_eq!(a.diagnostics.local_hits, 0);
}

#[test]
fn graph_fact_only_reaches_grg_context() {
    let e = engine(corpus(), two_hop_generator());
    let q = Query::text("Which function does the AMF select?");
    let rag = e.answer(&q, Mode::Rag).unwrap();
    let grg = e.answer(&q, Mode::Grg).unwrap();
    let fact = "AMF —selects→ SMF [source: ts-23501#0]";
    assert!(!rag.context.render().contains("—selects→"));
    assert!(grg.context.facts().contains(&fact.to_string()));
    assert_eq!(rag.answer, MOCK_FALLBACK);
    assert_eq!(grg.answer, "The answer is C.");
    assert_eq!(grg.diagnostics.facts, 1);
    assert_eq!(rag.context.chunk_ids(), grg.context.chunk_ids());
}

#[test]
fn contexts_nest_across_modes_and_resolve_to_stores() {
    let e = engine(corpus(), two_hop_generator());
    for text in ["Which function does the AMF select?", "How are stations scheduled?", "RLC segmentation"] {
        let q = Query::text(text);
        let blocks = |m| e.answer(&q, m).unwrap().context.blocks;
        let (base, rag, grg) = (blocks(Mode::Base), blocks(Mode::Rag), blocks(Mode::Grg));
        assert!(base.iter().all(|b| rag.contains(b)));
        assert!(rag.iter().all(|b| grg.contains(b)));
        assert!(grg.iter().filter(|b| !rag.contains(b)).all(|b| matches!(b, ContextBlock::Facts { .. })));
        for b in &grg {
            if let ContextBlock::Chunk { chunk_id, text, .. } = b {
                assert_eq!(&e.chunks.get(chunk_id).unwrap().text, text);
            }
        }
        let facts: HashSet<String> = e.graph.relations().iter().map(|r| render_fact(&e.graph, r)).collect();
        let ctx = e.answer(&q, Mode::Grg).unwrap().context;
        assert!(ctx.facts().iter().all(|f| facts.contains(f)));
    }
}

#[test]
fn answer_is_deterministic() {
    let e = engine(corpus(), two_hop_generator());
    let q = Query::text("Which function does the AMF select?");
    assert_eq!(e.answer(&q, Mode::Grg).unwrap(), e.answer(&q, Mode::Grg).unwrap());
}

#[test]
fn images_fuse_into_query() {
    let e = engine(corpus(), MockGenerator::new([("[ocr] QPSK".to_string(), "A".to_string())]));
    let q = Query {
        text: "what modulation is shown?".into(),
        images: vec![ImageInput::fixture("mcs-table").unwrap(), ImageInput::fixture("unknown").unwrap()],
    };
    let a = e.answer(&q, Mode::Base).unwrap();
    assert_eq!(
        a.diagnostics.fused_query,
        "what modulation is shown?\n[image] table of modulation and coding schemes\n[ocr] QPSK"
    );
    assert_eq!(a.answer, "A");
    assert_eq!(a.diagnostics.notices.len(), 2);
    assert!(matches!(e.answer(&Query::text(""), Mode::Rag), Err(GrgError::EmptyQuery)));
}

struct Broken;

impl GeneratorClient for Broken {
    fn name(&self) -> &str {
        "broken"
    }
    fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        Err(ClientError::timeout("broken", "slow"))
    }
}

#[test]
fn generator_failure_keeps_context() {
    let mut e = engine(corpus(), MockGenerator::default());
    e.generator = Arc::new(Broken);
    match e.answer(&Query::text("RLC segmentation"), Mode::Rag) {
        Err(GrgError::Generation { source, context }) => {
            assert!(source.is_retryable());
            assert!(!context.chunk_ids().is_empty());
        }
        other => panic!("expected generation error, got {other:?}"),
    }
}

#[test]
fn request_mirrors_context_blocks() {
    struct Echo;
    impl GeneratorClient for Echo {
        fn name(&self) -> &str {
            "echo"
        }
        fn generate(&self, r: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
            Ok(GenerationResponse {
                answer: r.context_blocks.join("\n\n"),
                generator: "echo".into(),
                usage: Default::default(),
            })
        }
    }
    let mut e = engine(corpus(), MockGenerator::default());
    e.generator = Arc::new(Echo);
    let a = e.answer(&Query::text("Which function does the AMF select?"), Mode::Grg).unwrap();
    assert_eq!(a.answer, a.context.render());
}

#[test]
fn mode_parsing() {
    for m in Mode::ALL {
        assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
    }
    assert!("hybrid".parse::<Mode>().is_err());
}
