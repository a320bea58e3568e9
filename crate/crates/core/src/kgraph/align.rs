//! Surface-form entity alignment.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;

use fnv::FnvHasher;

use super::{Entity, EntityMention};

/// Lowercase, trim, collapse internal whitespace, and drop a trailing plural
/// `s` when the result is longer than three chars.
pub fn normalize_surface(surface: &str) -> String {
    let mut s = surface.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if s.chars().count() > 3 && s.ends_with('s') {
        s.pop();
    }
    s
}

fn clean_surface(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Stable 64-bit id from the normalized name and entity type.
pub fn entity_id(normalized: &str, entity_type: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(normalized.as_bytes());
    h.write_u8(0x1f);
    h.write(entity_type.as_bytes());
    format!("e{:016x}", h.finish())
}

/// Most frequent key; ties go to the lexicographically smallest.
fn most_frequent(counts: &BTreeMap<String, usize>) -> String {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.clone())
        .unwrap_or_default()
}

/// Merge mentions whose normalized forms match. Returns the entities (sorted
/// by id) and a map from each raw mention surface to its entity id.
pub fn align_entities(mentions: &[EntityMention]) -> (Vec<Entity>, BTreeMap<String, String>) {
    #[derive(Default)]
    struct Group {
        surfaces: BTreeMap<String, usize>,
        types: BTreeMap<String, usize>,
        provenance: BTreeSet<String>,
        raw: BTreeSet<String>,
    }
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for m in mentions {
        let norm = normalize_surface(&m.surface);
        if norm.is_empty() {
            continue;
        }
        let g = groups.entry(norm).or_default();
        *g.surfaces.entry(clean_surface(&m.surface)).or_insert(0) += 1;
        *g.types.entry(m.type_hint.clone()).or_insert(0) += 1;
        g.provenance.insert(m.chunk_id.clone());
        g.raw.insert(m.surface.clone());
    }
    let mut entities = Vec::with_capacity(groups.len());
    let mut surface_map = BTreeMap::new();
    for (norm, g) in groups {
        let entity_type = most_frequent(&g.types);
        let id = entity_id(&norm, &entity_type);
        for raw in &g.raw {
            surface_map.insert(raw.clone(), id.clone());
        }
        entities.push(Entity {
            entity_id: id,
            canonical_name: most_frequent(&g.surfaces),
            entity_type,
            aliases: g.surfaces.into_keys().collect(),
            provenance: g.provenance,
        });
    }
    entities.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    (entities, surface_map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mentions(surfaces: &[&str]) -> Vec<EntityMention> {
        surfaces
            .iter()
            .map(|s| EntityMention {
                surface: s.to_string(),
                type_hint: "nf".into(),
                chunk_id: "c#0".into(),
            })
            .collect()
    }

    #[test]
    fn normalization_rule() {
        assert_eq!(normalize_surface("  PDU   Sessions "), "pdu session");
        assert_eq!(normalize_surface("SMS"), "sms");
        assert_eq!(normalize_surface("gNBs"), "gnb");
    }

    #[test]
    fn case_and_whitespace_variants_collapse() {
        let (entities, map) = align_entities(&mentions(&["AMF", "amf", "AMF "]));
        assert_eq!(entities.len(), 1);
        let e = &entities[0];
        assert_eq!(e.canonical_name, "AMF");
        assert_eq!(e.aliases, ["AMF", "amf"].iter().map(|s| s.to_string()).collect());
        assert_eq!(map.len(), 3);
        assert!(map.values().all(|id| *id == e.entity_id));
    }

    #[test]
    fn distinct_surfaces_stay_apart() {
        let (entities, _) = align_entities(&mentions(&["gNB", "SMF"]));
        assert_eq!(entities.len(), 2);
    }

    #[test]
    fn plural_tie_breaks_lexicographically() {
        // "beams" → "beam" after normalization; one occurrence each, so the
        // lexicographically smaller surface wins.
        assert_eq!(normalize_surface("beams"), normalize_surface("beam"));
        let (entities, _) = align_entities(&mentions(&["beams", "beam"]));
        assert_eq!(entities.len(), 1);
        assert_eq!(entities[0].canonical_name, "beam");

        let (entities, _) = align_entities(&mentions(&["beams", "beam", "beams"]));
        assert_eq!(entities[0].canonical_name, "beams");
    }

    #[test]
    fn ids_are_stable() {
        assert_eq!(entity_id("amf", "nf"), entity_id("amf", "nf"));
        assert_ne!(entity_id("amf", "nf"), entity_id("amf", "entity"));
        // FNV-1a 64 over b"amf\x1fentity"
        assert_eq!(entity_id("amf", "entity"), "ebca2b58870c2c0cb");
    }
}
