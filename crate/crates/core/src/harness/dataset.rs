use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::graph::{radgraph_from_value, RadGraph};
use crate::metrics::PathologyVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Where a record's serialization came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerializationSource {
    /// Serialized from the reference RadGraph.
    #[default]
    GroundTruth,
    /// Predicted from the image by an external content model.
    Predicted,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub study_id: String,
    pub serialization: Option<String>,
    pub serialization_source: SerializationSource,
    pub report: String,
    pub radiologist_id: Option<String>,
    pub pathology_vector: Option<PathologyVector>,
    pub split: Split,
    /// RadGraph of the reference report, in the ingestion format.
    pub radgraph: Option<RadGraph>,
    /// Externally produced direct image-to-report prediction.
    pub baseline_report: Option<String>,
}

impl StudyRecord {
    /// Serialization, if present and non-empty.
    pub fn serialization(&self) -> Option<&str> {
        self.serialization.as_deref().filter(|s| !s.is_empty())
    }

    pub fn is_usable(&self) -> bool {
        self.serialization().is_some() && !self.report.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    study_id: String,
    #[serde(default)]
    serialization: Option<String>,
    #[serde(default)]
    serialization_source: SerializationSource,
    report: String,
    #[serde(default)]
    radiologist_id: Option<String>,
    #[serde(default)]
    pathology_vector: Option<PathologyVector>,
    split: Split,
    #[serde(default)]
    radgraph: Option<serde_json::Value>,
    #[serde(default)]
    baseline_report: Option<String>,
}

/// Parses JSONL dataset text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<StudyRecord>, HarnessError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (ix, line) in reader.lines().enumerate() {
        let line_no = ix + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| HarnessError::Schema { line: line_no, message };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if !seen.insert(raw.study_id.clone()) {
            return Err(schema(format!("duplicate study_id {:?}", raw.study_id)));
        }
        let radgraph = raw
            .radgraph
            .as_ref()
            .map(radgraph_from_value)
            .transpose()
            .map_err(|e| schema(e.to_string()))?;
        out.push(StudyRecord {
            study_id: raw.study_id,
            serialization: raw.serialization,
            serialization_source: raw.serialization_source,
            report: raw.report,
            radiologist_id: raw.radiologist_id,
            pathology_vector: raw.pathology_vector,
            split: raw.split,
            radgraph,
            baseline_report: raw.baseline_report,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<StudyRecord>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(BufReader::new(file))
}
