//! Dense, style-free text serialization of a RadGraph.
//!
//! Each weakly connected component becomes one text span listing its
//! entities in report order, with `no` prepended to absent findings and
//! `maybe` to uncertain ones. Spans are grouped into a findings and an
//! impression section when the source report has both, and into a single
//! unified section otherwise.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{weakly_connected_components, Entity, EntityId, EntityLabel, RadGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SerializeError {
    #[error("entity {0} is not part of the graph")]
    UnknownEntity(EntityId),
    #[error("component is empty")]
    EmptyComponent,
    #[error("graph defines no report sections")]
    NoSections,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Findings,
    Impression,
    Unified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SerializerConfig {
    /// Joins components within a section.
    pub delimiter: String,
    /// Joins the findings and impression sections.
    pub section_separator: String,
    pub findings_header: String,
    pub impression_header: String,
    pub include_headers: bool,
}

impl Default for SerializerConfig {
    fn default() -> Self {
        SerializerConfig {
            delimiter: ". ".into(),
            section_separator: ". ".into(),
            findings_header: "findings: ".into(),
            impression_header: "impression: ".into(),
            include_headers: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentSpan {
    pub text: String,
    pub section: Section,
    pub min_start_ix: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Serialization {
    pub findings: Vec<ComponentSpan>,
    pub impression: Vec<ComponentSpan>,
    pub unified: Vec<ComponentSpan>,
    pub rendered: String,
}

impl Serialization {
    pub fn span_count(&self) -> usize {
        self.findings.len() + self.impression.len() + self.unified.len()
    }

    /// Rebuilds the rendered text from the spans.
    pub fn render(&self, cfg: &SerializerConfig) -> String {
        let join = |spans: &[ComponentSpan]| {
            spans.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(&cfg.delimiter)
        };
        if !self.unified.is_empty() {
            return join(&self.unified);
        }
        let mut parts = Vec::new();
        for (spans, header) in [
            (&self.findings, &cfg.findings_header),
            (&self.impression, &cfg.impression_header),
        ] {
            if spans.is_empty() {
                continue;
            }
            let body = join(spans);
            parts.push(if cfg.include_headers { format!("{header}{body}") } else { body });
        }
        parts.join(&cfg.section_separator)
    }
}

fn render_entity(e: &Entity) -> String {
    let tokens = e.tokens.trim();
    match e.label {
        EntityLabel::ObsDa => format!("no {tokens}"),
        EntityLabel::ObsU => format!("maybe {tokens}"),
        EntityLabel::AnatDp | EntityLabel::ObsDp => tokens.to_string(),
    }
}

fn resolve<'g>(ids: &BTreeSet<EntityId>, g: &'g RadGraph) -> Result<Vec<&'g Entity>, SerializeError> {
    if ids.is_empty() {
        return Err(SerializeError::EmptyComponent);
    }
    ids.iter()
        .map(|id| g.entity(id).ok_or_else(|| SerializeError::UnknownEntity(id.clone())))
        .collect()
}

/// Renders one component as a span. The section is left as `Unified`;
/// [`serialize`] assigns the final section.
pub fn serialize_component(
    ids: &BTreeSet<EntityId>,
    g: &RadGraph,
) -> Result<ComponentSpan, SerializeError> {
    let mut members = resolve(ids, g)?;
    members.sort_by(|a, b| {
        (a.start_ix, a.end_ix, a.tokens.as_str()).cmp(&(b.start_ix, b.end_ix, b.tokens.as_str()))
    });
    let text = members.iter().map(|e| render_entity(e)).collect::<Vec<_>>().join(" ");
    Ok(ComponentSpan { text, section: Section::Unified, min_start_ix: members[0].start_ix })
}

/// Majority vote over member start positions. Ties and entities outside
/// both ranges count toward findings.
pub fn section_of_component(
    ids: &BTreeSet<EntityId>,
    g: &RadGraph,
) -> Result<Section, SerializeError> {
    if g.sections.is_empty() {
        return Err(SerializeError::NoSections);
    }
    let members = resolve(ids, g)?;
    let in_impression = members
        .iter()
        .filter(|e| g.sections.impression.is_some_and(|r| r.contains(e.start_ix)))
        .count();
    let in_findings = members.len() - in_impression;
    Ok(if in_impression > in_findings { Section::Impression } else { Section::Findings })
}

pub fn serialize(g: &RadGraph, cfg: &SerializerConfig) -> Serialization {
    let mut out = Serialization::default();
    let stratify = g.sections.is_bipartite();
    for component in weakly_connected_components(g) {
        let mut span = serialize_component(&component, g)
            .expect("components are drawn from the graph itself");
        if stratify {
            span.section = section_of_component(&component, g).expect("sections are present");
        }
        match span.section {
            Section::Findings => out.findings.push(span),
            Section::Impression => out.impression.push(span),
            Section::Unified => out.unified.push(span),
        }
    }
    // Components arrive ordered by min start; the sorts keep that explicit.
    for spans in [&mut out.findings, &mut out.impression, &mut out.unified] {
        spans.sort_by_key(|s| s.min_start_ix);
    }
    out.rendered = out.render(cfg);
    out
}
