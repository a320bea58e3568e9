use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::client::ClientError;
use crate::jsonl;

fn chunk(id: &str, text: &str) -> Chunk {
    Chunk {
        chunk_id: id.into(),
        doc_id: id.split('#').next().unwrap().into(),
        span: (0, text.chars().count()),
        text: text.into(),
    }
}

fn fixture_chunks() -> Vec<Chunk> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/graph20/chunks.jsonl");
    jsonl::read(Path::new(path)).unwrap()
}

fn build(chunks: &[Chunk]) -> GraphBuild {
    build_graph(chunks, &PatternExtractor::default(), &BuildOptions::default()).unwrap()
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn surface_triples(g: &KnowledgeGraph) -> BTreeSet<(String, String, String)> {
    g.relations()
        .iter()
        .map(|r| {
            (
                g.entity(&r.subject_id).unwrap().canonical_name.clone(),
                r.predicate.clone(),
                g.entity(&r.object_id).unwrap().canonical_name.clone(),
            )
        })
        .collect()
}

/// Entities of a small hand-made graph, named `n0..`.
fn node(i: usize) -> Entity {
    Entity {
        entity_id: format!("n{i:02}"),
        canonical_name: format!("node {i}"),
        entity_type: "entity".into(),
        aliases: set(&[&format!("node {i}")]),
        provenance: set(&["c#0"]),
    }
}

fn edge(s: usize, p: &str, o: usize) -> Relation {
    Relation {
        subject_id: format!("n{s:02}"),
        predicate: p.into(),
        object_id: format!("n{o:02}"),
        confidence: 1.0,
        provenance: set(&["c#0"]),
    }
}

fn chain() -> KnowledgeGraph {
    KnowledgeGraph::from_parts((0..3).map(node).collect(), vec![edge(0, "to", 1), edge(1, "to", 2)]).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, edges: usize) -> KnowledgeGraph {
    let mut rels = BTreeMap::new();
    while rels.len() < edges {
        let (s, o) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if s != o {
            let p = ["a", "b"][rng.gen_range(0..2)];
            rels.insert((s, p, o), edge(s, p, o));
        }
    }
    KnowledgeGraph::from_parts((0..n).map(node).collect(), rels.into_values().collect()).unwrap()
}

/// Reference BFS over a plain undirected edge list.
fn bfs_oracle(g: &KnowledgeGraph, seeds: &[String], depth: usize) -> (BTreeSet<String>, BTreeSet<(String, String, String)>) {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in g.relations() {
        adj.entry(&r.subject_id).or_default().push(&r.object_id);
        adj.entry(&r.object_id).or_default().push(&r.subject_id);
    }
    let mut level: BTreeMap<String, usize> = BTreeMap::new();
    let mut q = VecDeque::new();
    for s in seeds.iter().filter(|s| g.entity(s).is_some()) {
        level.insert(s.clone(), 0);
        q.push_back(s.clone());
    }
    while let Some(v) = q.pop_front() {
        let d = level[&v];
        for &w in adj.get(v.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if d < depth && !level.contains_key(w) {
                level.insert(w.to_string(), d + 1);
                q.push_back(w.to_string());
            }
        }
    }
    let nodes: BTreeSet<String> = level.into_keys().collect();
    let edges = g
        .relations()
        .iter()
        .filter(|r| nodes.contains(&r.subject_id) && nodes.contains(&r.object_id))
        .map(|r| (r.subject_id.clone(), r.predicate.clone(), r.object_id.clone()))
        .collect();
    (nodes, edges)
}

fn observed(n: &Neighborhood) -> (BTreeSet<String>, BTreeSet<(String, String, String)>) {
    (
        n.graph.entities().map(|e| e.entity_id.clone()).collect(),
        n.graph
            .relations()
            .iter()
            .map(|r| (r.subject_id.clone(), r.predicate.clone(), r.object_id.clone()))
            .collect(),
    )
}

#[test]
fn duplicate_triples_merge_with_union_provenance() {
    let chunks = [chunk("a#0", "The AMF selects the SMF."), chunk("b#0", "The AMF selects the SMF.")];
    let g = build(&chunks).graph;
    assert_eq!(g.relation_count(), 1);
    assert_eq!(g.relations()[0].provenance, set(&["a#0", "b#0"]));
    assert_eq!(g.entity_count(), 2);
}

struct Scripted(Vec<(String, f64)>);

impl ExtractorClient for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }
    fn extract(&self, text: &str) -> Result<Vec<RawTriple>, ClientError> {
        let conf = self.0.iter().find(|(t, _)| t == text).map_or(1.0, |(_, c)| *c);
        Ok(vec![RawTriple {
            subject: "AMF".into(),
            subject_type: "nf".into(),
            predicate: "selects".into(),
            object: "SMF".into(),
            object_type: "nf".into(),
            confidence: conf,
        }])
    }
    fn mentions(&self, _: &str) -> Result<Vec<RawMention>, ClientError> {
        Ok(vec![])
    }
}

#[test]
fn merge_keeps_max_confidence() {
    let ex = Scripted(vec![("one".into(), 0.4), ("two".into(), 0.9)]);
    let chunks = [chunk("a#0", "one"), chunk("b#0", "two")];
    let g = build_graph(&chunks, &ex, &BuildOptions::default()).unwrap().graph;
    assert_eq!(g.relations()[0].confidence, 0.9);
}

#[test]
fn disjoint_topics_stay_disconnected() {
    let chunks = [chunk("a#0", "The AMF selects the SMF."), chunk("b#0", "The AP schedules stations.")];
    let g = build(&chunks).graph;
    assert_eq!(g.relation_count(), 2);
    let amf = g.resolve("AMF").unwrap().entity_id.clone();
    let n = g.neighborhood(&[amf], 2).unwrap();
    assert_eq!(n.graph.entity_count(), 2);
    assert!(n.graph.resolve("stations").is_none());
}

#[test]
fn twenty_chunk_fixture_matches_hand_alignment() {
    let chunks = fixture_chunks();
    assert_eq!(chunks.len(), 20);
    let built = build(&chunks);
    let g = &built.graph;

    let expected: BTreeSet<(String, String, String)> = [
        ("AMF", "selects", "SMF"),
        ("SMF", "controls", "UPF"),
        ("UPF", "forwards", "packets"),
        ("gNB", "hosts", "RRC"),
        ("gNB", "terminates", "Xn"),
        ("AUSF", "authenticates", "UE"),
        ("UDM", "stores", "subscription data"),
        ("NEF", "exposes", "network capabilities"),
        ("PCF", "provides", "policy rules"),
        ("AP", "schedules", "stations"),
        ("LDPC encoder", "encodes", "transport block"),
        ("NRF", "stores", "NF profiles"),
    ]
    .iter()
    .map(|(s, p, o)| (s.to_string(), p.to_string(), o.to_string()))
    .collect();
    assert_eq!(g.relation_count(), 12);
    assert_eq!(surface_triples(g), expected);
    assert_eq!(g.entity_count(), 21);
    assert_eq!(built.report.triples, 17);
    assert!(built.report.unextracted.is_empty());

    let amf = g.resolve("amf").unwrap();
    assert_eq!(amf.aliases, set(&["AMF", "amf"]));
    let tb = g.resolve("transport blocks").unwrap();
    assert_eq!(tb.aliases, set(&["transport block", "transport blocks"]));
    assert_eq!(tb.provenance, set(&["kg-11#0", "kg-14#0"]));

    let selects = g.outgoing(&amf.entity_id).next().unwrap();
    assert_eq!(selects.provenance, set(&["kg-00#0", "kg-01#0"]));

    g.check_integrity().unwrap();
    let ids: HashSet<&str> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
    g.check_provenance(&ids).unwrap();
}

#[test]
fn rebuild_is_identical() {
    let chunks = fixture_chunks();
    let a = build(&chunks).graph;
    let mut reversed = chunks.clone();
    reversed.reverse();
    let b = build(&reversed).graph;
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn provenance_check_catches_missing_chunk() {
    let g = build(&fixture_chunks()).graph;
    let ids: HashSet<&str> = ["kg-00#0"].into_iter().collect();
    assert!(matches!(g.check_provenance(&ids), Err(GraphError::Integrity(_))));
}

#[test]
fn no_triples_is_empty_graph_with_warning() {
    let built = build(&[chunk("p#0", "Fresh pasta needs flour and eggs.")]);
    assert!(built.graph.is_empty());
    assert_eq!(built.report.warnings.len(), 1);
    assert!(matches!(
        build_graph(&[], &PatternExtractor::default(), &BuildOptions::default()),
        Err(GraphError::NoChunks)
    ));
}

struct Down;

impl ExtractorClient for Down {
    fn name(&self) -> &str {
        "down"
    }
    fn extract(&self, _: &str) -> Result<Vec<RawTriple>, ClientError> {
        Err(ClientError::timeout("down", "no answer"))
    }
    fn mentions(&self, _: &str) -> Result<Vec<RawMention>, ClientError> {
        Ok(vec![])
    }
}

#[test]
fn failing_extractor_marks_chunks_unextracted() {
    let built = build_graph(&[chunk("a#0", "x"), chunk("b#0", "y")], &Down, &BuildOptions::default()).unwrap();
    assert!(built.graph.is_empty());
    assert_eq!(built.report.unextracted, vec!["a#0", "b#0"]);
}

#[test]
fn self_loops_dropped_unless_reflexive_allowed() {
    let chunks = [chunk("a#0", "The AMF uses AMF.")];
    let built = build(&chunks);
    assert_eq!(built.graph.relation_count(), 0);
    assert_eq!(built.report.self_loops_dropped, 1);

    let opts = BuildOptions {
        reflexive_predicates: set(&["uses", "alias_of"]),
        ..Default::default()
    };
    let g = build_graph(&chunks, &PatternExtractor::default(), &opts).unwrap().graph;
    assert_eq!(g.relation_count(), 1);
    g.check_integrity().unwrap();
    let back = KnowledgeGraph::from_json(&g.to_json()).unwrap();
    assert_eq!(back, g);
    let strict = KnowledgeGraph::from_parts(g.entities().cloned().collect(), g.relations().to_vec());
    assert!(strict.is_err());

    let alias = [chunk("a#0", "The AMF aliases AMF.")];
    let ex = PatternExtractor::new([("aliases".to_string(), "alias_of".to_string())]);
    let built = build_graph(&alias, &ex, &opts).unwrap();
    assert_eq!(built.graph.relation_count(), 0);
    assert_eq!(built.report.self_loops_dropped, 1);
}

#[test]
fn integrity_rejects_dangling_and_empty_provenance() {
    let dangling = KnowledgeGraph::from_parts(vec![node(0)], vec![edge(0, "to", 1)]);
    assert!(matches!(dangling, Err(GraphError::Integrity(_))));
    let mut bare = edge(0, "to", 1);
    bare.provenance.clear();
    assert!(KnowledgeGraph::from_parts(vec![node(0), node(1)], vec![bare]).is_err());
    let mut e = node(0);
    e.provenance.clear();
    assert!(KnowledgeGraph::from_parts(vec![e], vec![]).is_err());
    assert!(KnowledgeGraph::from_parts(vec![node(0), node(0)], vec![]).is_err());
    assert!(KnowledgeGraph::from_parts(vec![node(0), node(1)], vec![edge(0, "to", 1), edge(0, "to", 1)]).is_err());
}

#[test]
fn chain_neighborhood_by_depth() {
    let g = chain();
    let d1 = g.neighborhood(&["n00".into()], 1).unwrap();
    assert_eq!(observed(&d1).0, set(&["n00", "n01"]));
    assert_eq!(d1.graph.relation_count(), 1);
    let d2 = g.neighborhood(&["n00".into()], 2).unwrap();
    assert_eq!(observed(&d2).0, set(&["n00", "n01", "n02"]));
    assert_eq!(d2.graph.relation_count(), 2);
    assert!(d1.notices.is_empty());
    assert!(matches!(g.neighborhood(&[], 3), Err(GraphError::Depth(3))));
}

#[test]
fn unknown_seeds_give_notices() {
    let g = chain();
    let n = g.neighborhood(&["ghost".into()], 1).unwrap();
    assert!(n.graph.is_empty());
    assert_eq!(n.notices.len(), 2);
    let n = g.neighborhood(&["ghost".into(), "n02".into()], 1).unwrap();
    assert_eq!(n.graph.entity_count(), 2);
    assert_eq!(n.notices.len(), 1);
}

#[test]
fn neighborhood_matches_bfs_oracle_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..5 {
        let g = random_graph(&mut rng, 50, 60);
        for seed in 0..20 {
            let seeds = vec![format!("n{:02}", (seed * 7) % 50)];
            for depth in [1, 2] {
                let got = g.neighborhood(&seeds, depth).unwrap();
                assert_eq!(observed(&got), bfs_oracle(&g, &seeds, depth));
            }
        }
    }
}

proptest! {
    #[test]
    fn neighborhood_is_monotone_and_closed(seed in any::<u64>(), edges in 0usize..90, picks in prop::collection::vec(0usize..50, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 50, edges);
        let seeds: Vec<String> = picks.iter().map(|i| format!("n{i:02}")).collect();
        let d1 = g.neighborhood(&seeds, 1).unwrap();
        let d2 = g.neighborhood(&seeds, 2).unwrap();
        let (n1, e1) = observed(&d1);
        let (n2, e2) = observed(&d2);
        prop_assert!(n1.is_subset(&n2));
        prop_assert!(e1.is_subset(&e2));
        prop_assert_eq!((n2, e2), bfs_oracle(&g, &seeds, 2));
        d2.graph.check_integrity().unwrap();
    }
}

#[test]
fn json_round_trip_and_files() {
    let g = build(&fixture_chunks()).graph;
    assert_eq!(KnowledgeGraph::from_json(&g.to_json()).unwrap(), g);
    let back: KnowledgeGraph = serde_json::from_str(&g.to_json()).unwrap();
    assert_eq!(back, g);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/graph.json");
    g.export(&path).unwrap();
    let imported = KnowledgeGraph::import(&path).unwrap();
    assert_eq!(imported, g);
    assert_eq!(imported.resolve("AMF"), g.resolve("AMF"));

    let empty = KnowledgeGraph::default();
    assert_eq!(KnowledgeGraph::from_json(&empty.to_json()).unwrap(), empty);
}

#[test]
fn schema_version_mismatch_rejected() {
    let text = KnowledgeGraph::default().to_json().replace("\"schema_version\": 1", "\"schema_version\": 2");
    assert!(matches!(
        KnowledgeGraph::from_json(&text),
        Err(GraphError::SchemaVersion { expected: 1, found: 2 })
    ));
    assert!(matches!(KnowledgeGraph::from_json("{"), Err(GraphError::Format(_))));
}

#[test]
fn json_field_names() {
    let v: serde_json::Value = serde_json::from_str(&chain().to_json()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["entities"][0]["type"], "entity");
    assert_eq!(v["relations"][0]["subject_id"], "n00");
    assert_eq!(v["relations"][0]["provenance"][0], "c#0");
}

#[test]
fn statements_put_nodes_before_edges() {
    let g = KnowledgeGraph::from_parts(vec![node(0), node(1)], vec![edge(0, "to", 1)]).unwrap();
    let text = g.to_statements();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("MERGE (n:Entity {id: \"n00\"})"));
    assert!(lines[1].starts_with("MERGE (n:Entity {id: \"n01\"})"));
    assert_eq!(
        lines[2],
        "MATCH (a:Entity {id: \"n00\"}), (b:Entity {id: \"n01\"}) MERGE (a)-[r:RELATES {predicate: \"to\"}]->(b) SET r.confidence = 1.0, r.provenance = [\"c#0\"];"
    );
    assert!(text.ends_with(";\n"));
}
