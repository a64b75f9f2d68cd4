//! Outputs of external annotators (RadGraph extraction, CheXbert labelling,
//! BERT token embeddings), looked up by study id for reference reports and
//! by exact text for generated ones.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use super::dataset::StudyRecord;
use super::HarnessError;
use crate::graph::{radgraph_from_value, RadGraph};
use crate::metrics::{EmbeddingMatrix, PathologyVector};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextAnnotation {
    pub radgraph: Option<RadGraph>,
    pub pathology_vector: Option<PathologyVector>,
    pub embedding: Option<EmbeddingMatrix>,
}

impl TextAnnotation {
    fn fill_from(&mut self, other: &TextAnnotation) {
        if self.radgraph.is_none() {
            self.radgraph = other.radgraph.clone();
        }
        if self.pathology_vector.is_none() {
            self.pathology_vector = other.pathology_vector;
        }
        if self.embedding.is_none() {
            self.embedding = other.embedding.clone();
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationStore {
    by_study: HashMap<String, TextAnnotation>,
    by_text: HashMap<String, TextAnnotation>,
}

/// `{"<study_id>": [0, 1, ...]}`
pub fn load_pathology_sidecar(path: &Path) -> Result<BTreeMap<String, PathologyVector>, HarnessError> {
    read_json(path)
}

/// `{"<study_id>": [[f64, ...], ...]}`
pub fn load_embedding_sidecar(path: &Path) -> Result<BTreeMap<String, EmbeddingMatrix>, HarnessError> {
    let raw: BTreeMap<String, Vec<Vec<f64>>> = read_json(path)?;
    raw.into_iter()
        .map(|(id, rows)| {
            EmbeddingMatrix::new(rows)
                .map(|m| (id.clone(), m))
                .map_err(|e| HarnessError::Input(format!("{}: study {id}: {e}", path.display())))
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTextAnnotation {
    text: String,
    #[serde(default)]
    radgraph: Option<serde_json::Value>,
    #[serde(default)]
    pathology_vector: Option<PathologyVector>,
    #[serde(default)]
    embedding: Option<Vec<Vec<f64>>>,
}

/// Parses JSONL lines of `{"text", "radgraph"?, "pathology_vector"?, "embedding"?}`.
pub fn parse_text_annotations(reader: impl BufRead) -> Result<Vec<(String, TextAnnotation)>, HarnessError> {
    let mut out = Vec::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| HarnessError::Schema { line: ix + 1, message };
        let raw: RawTextAnnotation = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let radgraph = raw
            .radgraph
            .as_ref()
            .map(radgraph_from_value)
            .transpose()
            .map_err(|e| schema(e.to_string()))?;
        let embedding = raw
            .embedding
            .map(EmbeddingMatrix::new)
            .transpose()
            .map_err(|e| schema(e.to_string()))?;
        out.push((raw.text, TextAnnotation { radgraph, pathology_vector: raw.pathology_vector, embedding }));
    }
    Ok(out)
}

impl AnnotationStore {
    /// Indexes the reference annotations carried by `records`, merged with
    /// the sidecar maps. Each reference report text is also indexed so that a
    /// generation reproducing it verbatim resolves to the same annotations.
    pub fn from_records(
        records: &[StudyRecord],
        pathology: &BTreeMap<String, PathologyVector>,
        embeddings: &BTreeMap<String, EmbeddingMatrix>,
    ) -> Self {
        let mut store = AnnotationStore::default();
        for r in records {
            let ann = TextAnnotation {
                radgraph: r.radgraph.clone(),
                pathology_vector: r.pathology_vector.or_else(|| pathology.get(&r.study_id).copied()),
                embedding: embeddings.get(&r.study_id).cloned(),
            };
            store.by_text.entry(r.report.clone()).or_default().fill_from(&ann);
            store.by_study.insert(r.study_id.clone(), ann);
        }
        store
    }

    /// Adds annotations of generated texts. Earlier entries win on conflict.
    pub fn extend_text(&mut self, entries: impl IntoIterator<Item = (String, TextAnnotation)>) {
        for (text, ann) in entries {
            self.by_text.entry(text).or_default().fill_from(&ann);
        }
    }

    pub fn reference(&self, study_id: &str) -> Option<&TextAnnotation> {
        self.by_study.get(study_id)
    }

    pub fn for_text(&self, text: &str) -> Option<&TextAnnotation> {
        self.by_text.get(text)
    }
}
