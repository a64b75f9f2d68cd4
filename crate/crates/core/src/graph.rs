//! RadGraph data model, ingestion, validation and weak connectivity.
//!
//! A RadGraph is a set of labelled entities extracted from a chest X-ray
//! report plus typed, directed relations between them. Graphs are ingested
//! from the public RadGraph record format:
//!
//! ```json
//! {
//!   "text": "FINDINGS : lungs are clear .",
//!   "entities": {
//!     "1": {"tokens": "lungs", "label": "ANAT-DP", "start_ix": 2, "end_ix": 2, "relations": []},
//!     "2": {"tokens": "clear", "label": "OBS-DP", "start_ix": 4, "end_ix": 4,
//!           "relations": [["located_at", "1"]]}
//!   }
//! }
//! ```
//!
//! A bare entity map (entity ids at the top level, with an optional sibling
//! `"text"` string) is accepted as well.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::text::split_tokens;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed RadGraph JSON: {0}")]
    Parse(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

/// Opaque entity identifier. Numeric ids are never interpreted as numbers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        EntityId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityLabel {
    /// Anatomy, definitely present.
    AnatDp,
    /// Observation, definitely present.
    ObsDp,
    /// Observation, definitely absent.
    ObsDa,
    /// Observation, uncertain.
    ObsU,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 4] = [
        EntityLabel::AnatDp,
        EntityLabel::ObsDp,
        EntityLabel::ObsDa,
        EntityLabel::ObsU,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityLabel::AnatDp => "ANAT-DP",
            EntityLabel::ObsDp => "OBS-DP",
            EntityLabel::ObsDa => "OBS-DA",
            EntityLabel::ObsU => "OBS-U",
        }
    }
}

impl FromStr for EntityLabel {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| GraphError::Schema(format!("unknown entity label {s:?}")))
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKind {
    Modify,
    LocatedAt,
    SuggestiveOf,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::Modify,
        RelationKind::LocatedAt,
        RelationKind::SuggestiveOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Modify => "modify",
            RelationKind::LocatedAt => "located_at",
            RelationKind::SuggestiveOf => "suggestive_of",
        }
    }
}

impl FromStr for RelationKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GraphError::Schema(format!("unknown relation kind {s:?}")))
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub tokens: String,
    pub label: EntityLabel,
    pub start_ix: usize,
    pub end_ix: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Relation {
    pub source: EntityId,
    pub target: EntityId,
    pub kind: RelationKind,
}

/// Inclusive token-index interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenRange {
    pub start: usize,
    pub end: usize,
}

impl TokenRange {
    pub fn contains(&self, ix: usize) -> bool {
        self.start <= ix && ix <= self.end
    }

    fn overlaps(&self, other: &TokenRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SectionMap {
    pub findings: Option<TokenRange>,
    pub impression: Option<TokenRange>,
}

impl SectionMap {
    /// Locates the `FINDINGS` and `IMPRESSION` headers (case-insensitive) in
    /// the token stream of `text`. Each section runs from its header to the
    /// token before the next header, or to the end of the text.
    pub fn locate(text: &str) -> SectionMap {
        let tokens = split_tokens(text);
        let mut headers: Vec<(usize, bool)> = Vec::new();
        for (ix, tok) in tokens.iter().enumerate() {
            if tok.eq_ignore_ascii_case("findings") {
                headers.push((ix, true));
            } else if tok.eq_ignore_ascii_case("impression") {
                headers.push((ix, false));
            }
        }
        // Only the first occurrence of each header counts.
        let first_findings = headers.iter().find(|h| h.1).map(|h| h.0);
        let first_impression = headers.iter().find(|h| !h.1).map(|h| h.0);
        let last = tokens.len().saturating_sub(1);
        let range_from = |start: usize, other: Option<usize>| {
            let end = match other {
                Some(o) if o > start => o - 1,
                _ => last,
            };
            TokenRange { start, end }
        };
        SectionMap {
            findings: first_findings.map(|s| range_from(s, first_impression)),
            impression: first_impression.map(|s| range_from(s, first_findings)),
        }
    }

    pub fn is_bipartite(&self) -> bool {
        self.findings.is_some() && self.impression.is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_none() && self.impression.is_none()
    }
}

/// A validated knowledge graph over one report.
///
/// Fields are public so callers can assemble graphs by hand; such graphs
/// should be checked with [`validate`] before use.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RadGraph {
    pub entities: BTreeMap<EntityId, Entity>,
    pub relations: Vec<Relation>,
    pub sections: SectionMap,
    pub report_text: Option<String>,
}

impl RadGraph {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    /// Writes the graph back to the ingestion format. Relations are attached
    /// to their source entity in their original order.
    pub fn to_json(&self) -> Value {
        let mut entities = Map::new();
        for (id, e) in &self.entities {
            let relations: Vec<Value> = self
                .relations
                .iter()
                .filter(|r| &r.source == id)
                .map(|r| Value::Array(vec![r.kind.as_str().into(), r.target.0.clone().into()]))
                .collect();
            let mut obj = Map::new();
            obj.insert("tokens".into(), e.tokens.clone().into());
            obj.insert("label".into(), e.label.as_str().into());
            obj.insert("start_ix".into(), e.start_ix.into());
            obj.insert("end_ix".into(), e.end_ix.into());
            obj.insert("relations".into(), Value::Array(relations));
            entities.insert(id.0.clone(), Value::Object(obj));
        }
        let mut doc = Map::new();
        if let Some(text) = &self.report_text {
            doc.insert("text".into(), text.clone().into());
        }
        doc.insert("entities".into(), Value::Object(entities));
        Value::Object(doc)
    }
}

#[derive(Deserialize)]
struct RawEntity {
    tokens: String,
    label: String,
    start_ix: usize,
    end_ix: usize,
    #[serde(default)]
    relations: Vec<(String, Value)>,
}

/// Parses one RadGraph record from UTF-8 JSON bytes.
pub fn parse_radgraph(payload: &[u8]) -> Result<RadGraph, GraphError> {
    let value: Value =
        serde_json::from_slice(payload).map_err(|e| GraphError::Parse(e.to_string()))?;
    radgraph_from_value(&value)
}

/// Builds a RadGraph from an already-decoded JSON value in the ingestion format.
pub fn radgraph_from_value(value: &Value) -> Result<RadGraph, GraphError> {
    let doc = value
        .as_object()
        .ok_or_else(|| GraphError::Parse("expected a JSON object".into()))?;
    let text = match doc.get("text") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err(GraphError::Parse("field \"text\" must be a string".into())),
    };

    let entries: Vec<(&String, &Value)> = match doc.get("entities") {
        Some(Value::Object(map)) => map.iter().collect(),
        Some(_) => return Err(GraphError::Parse("field \"entities\" must be an object".into())),
        None => doc.iter().filter(|(_, v)| v.is_object()).collect(),
    };

    let mut entities = BTreeMap::new();
    let mut pending: Vec<(EntityId, Vec<(String, Value)>)> = Vec::new();
    for (key, raw) in entries {
        let raw: RawEntity = serde_json::from_value(raw.clone())
            .map_err(|e| GraphError::Parse(format!("entity {key}: {e}")))?;
        let label = raw
            .label
            .parse::<EntityLabel>()
            .map_err(|_| GraphError::Schema(raw.label.clone()))?;
        let id = EntityId(key.clone());
        if raw.tokens.trim().is_empty() {
            return Err(GraphError::Schema(format!("entity {id} has empty tokens")));
        }
        if raw.start_ix > raw.end_ix {
            return Err(GraphError::Schema(format!(
                "entity {id} has start_ix {} > end_ix {}",
                raw.start_ix, raw.end_ix
            )));
        }
        entities.insert(
            id.clone(),
            Entity {
                id: id.clone(),
                tokens: raw.tokens,
                label,
                start_ix: raw.start_ix,
                end_ix: raw.end_ix,
            },
        );
        pending.push((id, raw.relations));
    }

    let mut relations = Vec::new();
    let mut seen = BTreeSet::new();
    for (source, rels) in pending {
        for (kind, target) in rels {
            let kind = kind
                .parse::<RelationKind>()
                .map_err(|_| GraphError::Schema(kind.clone()))?;
            let target = match target {
                Value::String(s) => EntityId(s),
                Value::Number(n) => EntityId(n.to_string()),
                other => {
                    return Err(GraphError::Parse(format!(
                        "relation target of entity {source} must be a string id, got {other}"
                    )))
                }
            };
            if !entities.contains_key(&target) {
                return Err(GraphError::Schema(format!(
                    "dangling relation target {target} on entity {source}"
                )));
            }
            if target == source {
                return Err(GraphError::Schema(format!("self-relation on entity {source}")));
            }
            let rel = Relation { source: source.clone(), target, kind };
            if !seen.insert((rel.source.clone(), rel.target.clone(), rel.kind)) {
                tracing::warn!(
                    source = %rel.source,
                    target = %rel.target,
                    kind = %rel.kind,
                    "collapsing duplicate relation"
                );
                continue;
            }
            relations.push(rel);
        }
    }

    let sections = text.as_deref().map(SectionMap::locate).unwrap_or_default();
    Ok(RadGraph { entities, relations, sections, report_text: text })
}

/// Returns every invariant violation in `g`, ordered by entity id and then
/// by relation index. An empty result means the graph is valid.
pub fn validate(g: &RadGraph) -> Vec<String> {
    let mut out = Vec::new();
    for (key, e) in &g.entities {
        if &e.id != key {
            out.push(format!("entity keyed {key} carries id {}", e.id));
        }
        if e.tokens.trim().is_empty() {
            out.push(format!("entity {key} has empty tokens"));
        }
        if e.start_ix > e.end_ix {
            out.push(format!(
                "entity {key} has start_ix {} > end_ix {}",
                e.start_ix, e.end_ix
            ));
        }
    }
    let mut seen: HashMap<(&EntityId, &EntityId, RelationKind), usize> = HashMap::new();
    for (ix, r) in g.relations.iter().enumerate() {
        if !g.entities.contains_key(&r.source) {
            out.push(format!("dangling relation source {}", r.source));
        }
        if !g.entities.contains_key(&r.target) {
            out.push(format!("dangling relation target {}", r.target));
        }
        if r.source == r.target {
            out.push(format!("self-relation on entity {}", r.source));
        }
        if let Some(first) = seen.insert((&r.source, &r.target, r.kind), ix) {
            out.push(format!(
                "duplicate relation ({}, {}, {}) at indices {first} and {ix}",
                r.source, r.target, r.kind
            ));
        }
    }
    if let (Some(f), Some(i)) = (g.sections.findings, g.sections.impression) {
        if f.overlaps(&i) {
            out.push("findings and impression ranges overlap".to_string());
        }
    }
    out
}

/// Disjoint-set forest over dense indices.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        UnionFind { parent: (0..len).collect(), size: vec![1; len] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Partitions the entities of `g` into weakly connected components.
///
/// Components are ordered by the smallest `start_ix` among their members;
/// ties fall back to the smallest member id.
pub fn weakly_connected_components(g: &RadGraph) -> Vec<BTreeSet<EntityId>> {
    let ids: Vec<&EntityId> = g.entities.keys().collect();
    let index: HashMap<&EntityId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut uf = UnionFind::new(ids.len());
    for r in &g.relations {
        if let (Some(&a), Some(&b)) = (index.get(&r.source), index.get(&r.target)) {
            uf.union(a, b);
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<EntityId>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().insert((*id).clone());
    }
    let mut components: Vec<BTreeSet<EntityId>> = groups.into_values().collect();
    components.sort_by_cached_key(|c| {
        let min_start = c.iter().map(|id| g.entities[id].start_ix).min().unwrap_or(usize::MAX);
        (min_start, c.iter().next().cloned())
    });
    components
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_entity() -> &'static str {
        r#"{"entities": {
            "1": {"tokens": "lungs", "label": "ANAT-DP", "start_ix": 5, "end_ix": 5, "relations": []},
            "2": {"tokens": "clear", "label": "OBS-DP", "start_ix": 7, "end_ix": 7,
                  "relations": [["located_at", "1"]]}
        }}"#
    }

    #[test]
    fn parses_empty_entity_map() {
        let g = parse_radgraph(br#"{"entities": {}}"#).unwrap();
        assert!(g.entities.is_empty());
        assert!(g.relations.is_empty());
        let g = parse_radgraph(b"{}").unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn parses_two_entities_with_relation() {
        let g = parse_radgraph(two_entity().as_bytes()).unwrap();
        assert_eq!(g.entities.len(), 2);
        assert_eq!(
            g.relations,
            vec![Relation { source: "2".into(), target: "1".into(), kind: RelationKind::LocatedAt }]
        );
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn bare_entity_map_with_text() {
        let doc = r#"{"text": "lungs clear", "1": {"tokens": "lungs", "label": "ANAT-DP",
            "start_ix": 0, "end_ix": 0, "relations": []}, "data_source": "x"}"#;
        let g = parse_radgraph(doc.as_bytes()).unwrap();
        assert_eq!(g.entities.len(), 1);
        assert_eq!(g.report_text.as_deref(), Some("lungs clear"));
    }

    #[test]
    fn unknown_label_is_schema_error() {
        let doc = r#"{"entities": {"1": {"tokens": "x", "label": "OBS-XX", "start_ix": 0, "end_ix": 0}}}"#;
        match parse_radgraph(doc.as_bytes()) {
            Err(GraphError::Schema(v)) => assert_eq!(v, "OBS-XX"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_relation_kind_is_schema_error() {
        let doc = r#"{"entities": {
            "1": {"tokens": "a", "label": "ANAT-DP", "start_ix": 0, "end_ix": 0, "relations": [["causes", "2"]]},
            "2": {"tokens": "b", "label": "OBS-DP", "start_ix": 1, "end_ix": 1, "relations": []}}}"#;
        match parse_radgraph(doc.as_bytes()) {
            Err(GraphError::Schema(v)) => assert_eq!(v, "causes"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_target_rejected_on_ingest() {
        let doc = r#"{"entities": {"1": {"tokens": "a", "label": "ANAT-DP", "start_ix": 0, "end_ix": 0,
            "relations": [["modify", "99"]]}}}"#;
        let err = parse_radgraph(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, GraphError::Schema(ref m) if m.contains("99")), "{err}");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_radgraph(b"{not json"), Err(GraphError::Parse(_))));
        assert!(matches!(parse_radgraph(b"[1,2]"), Err(GraphError::Parse(_))));
    }

    #[test]
    fn duplicate_relations_collapse() {
        let doc = r#"{"entities": {
            "1": {"tokens": "a", "label": "ANAT-DP", "start_ix": 0, "end_ix": 0,
                  "relations": [["modify", "2"], ["modify", "2"]]},
            "2": {"tokens": "b", "label": "OBS-DP", "start_ix": 1, "end_ix": 1, "relations": []}}}"#;
        let g = parse_radgraph(doc.as_bytes()).unwrap();
        assert_eq!(g.relations.len(), 1);
    }

    #[test]
    fn validate_reports_dangling_and_duplicates() {
        let mut g = parse_radgraph(two_entity().as_bytes()).unwrap();
        g.relations.push(Relation { source: "1".into(), target: "99".into(), kind: RelationKind::Modify });
        assert_eq!(validate(&g), vec!["dangling relation target 99".to_string()]);

        let mut g = parse_radgraph(two_entity().as_bytes()).unwrap();
        g.relations.push(g.relations[0].clone());
        let v = validate(&g);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("(2, 1, located_at)"), "{v:?}");
    }

    #[test]
    fn components_single_and_ordered() {
        let doc = r#"{"entities": {
            "c": {"tokens": "effusion", "label": "OBS-DA", "start_ix": 1, "end_ix": 1},
            "a": {"tokens": "lungs", "label": "ANAT-DP", "start_ix": 5, "end_ix": 5, "relations": []},
            "b": {"tokens": "clear", "label": "OBS-DP", "start_ix": 0, "end_ix": 0,
                  "relations": [["located_at", "a"]]}}}"#;
        let g = parse_radgraph(doc.as_bytes()).unwrap();
        let comps = weakly_connected_components(&g);
        let expect: Vec<BTreeSet<EntityId>> = vec![
            ["a", "b"].into_iter().map(EntityId::from).collect(),
            ["c"].into_iter().map(EntityId::from).collect(),
        ];
        assert_eq!(comps, expect);

        let single = parse_radgraph(
            br#"{"entities": {"e1": {"tokens": "x", "label": "OBS-U", "start_ix": 0, "end_ix": 0}}}"#,
        )
        .unwrap();
        assert_eq!(weakly_connected_components(&single).len(), 1);
    }

    #[test]
    fn locates_sections() {
        let s = SectionMap::locate("FINDINGS : lungs clear . IMPRESSION : no acute process .");
        assert_eq!(s.findings, Some(TokenRange { start: 0, end: 4 }));
        assert_eq!(s.impression, Some(TokenRange { start: 5, end: 10 }));
        let s = SectionMap::locate("Impression: normal chest");
        assert!(s.findings.is_none());
        assert_eq!(s.impression, Some(TokenRange { start: 0, end: 3 }));
        assert!(SectionMap::locate("lungs are clear").is_empty());
    }
}
