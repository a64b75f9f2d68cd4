//! TOML run configuration and the `evaluate` entry point.
//!
//! ```toml
//! transport = "http"          # or "mock-echo", "mock-empty"
//!
//! [data]
//! dataset = "studies.jsonl"
//! output_dir = "out"
//!
//! [serializer]
//! delimiter = ". "
//!
//! [metrics.radcliq]
//! bias = 2.0
//! weights = { radgraph_f1 = -1.0 }
//!
//! [client]
//! model = "gpt-3.5-turbo"
//!
//! [experiment]
//! shots = [0, 1, 5, 10]
//! seed = 42
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::annotations::{load_embedding_sidecar, load_pathology_sidecar, parse_text_annotations, AnnotationStore};
use super::dataset::{load_dataset, Split, StudyRecord};
use super::experiment::{run_end_to_end, run_serialization_to_report, ExperimentConfig, ExperimentRun};
use super::scoring::{MetricsConfig, Scorer};
use super::table::{render_table, TableFormat};
use super::HarnessError;
use crate::llm::mock::{LookupTransport, ScriptedTransport};
use crate::llm::{ClientConfig, HttpTransport, LlmClient, Transport};
use crate::prompt::PromptStyle;
use crate::serializer::SerializerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    #[default]
    Http,
    /// Answers every evaluation prompt with the study's reference report.
    MockEcho,
    /// Answers every prompt with an empty completion.
    MockEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ser2Rep,
    End2End,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: Option<PathBuf>,
    /// Reference CheXbert vectors keyed by study id.
    pub pathology_vectors: Option<PathBuf>,
    /// Reference BERT token embeddings keyed by study id.
    pub embeddings: Option<PathBuf>,
    /// JSONL annotations of generated report texts.
    pub generated_annotations: Option<PathBuf>,
    /// Where `table.txt`, `table.csv` and `items.jsonl` are written.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub transport: TransportKind,
    pub data: DataConfig,
    pub serializer: SerializerConfig,
    pub metrics: MetricsConfig,
    pub client: ClientConfig,
    pub experiment: ExperimentConfig,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Input(format!("config: {e}")))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let data = &mut cfg.data;
        for p in [
            &mut data.dataset,
            &mut data.pathology_vectors,
            &mut data.embeddings,
            &mut data.generated_annotations,
            &mut data.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Identity generator: maps each evaluation prompt to its reference report.
pub fn echo_transport(records: &[StudyRecord], style: PromptStyle) -> LookupTransport {
    let mut replies = HashMap::new();
    for r in records {
        if let Some(ser) = r.serialization() {
            let key = style.user_content(ser);
            if replies.contains_key(&key) {
                tracing::warn!(study = %r.study_id, "duplicate serialization; echo keeps the first report");
                continue;
            }
            replies.insert(key, r.report.clone());
        }
    }
    LookupTransport::new(replies)
}

#[derive(Debug)]
pub struct EvaluateOutput {
    pub run: ExperimentRun,
    pub text: String,
    pub csv: String,
}

/// Loads the configured data, runs one experiment and writes its outputs.
pub async fn evaluate(cfg: &HarnessConfig, mode: Mode) -> Result<EvaluateOutput, HarnessError> {
    let dataset = cfg
        .data
        .dataset
        .as_deref()
        .ok_or_else(|| HarnessError::Input("config has no data.dataset".into()))?;
    let records = load_dataset(dataset)?;
    let (pool, tests): (Vec<StudyRecord>, Vec<StudyRecord>) =
        records.iter().cloned().partition(|r| r.split == Split::Train);

    let pathology = cfg.data.pathology_vectors.as_deref().map(load_pathology_sidecar).transpose()?;
    let embeddings = cfg.data.embeddings.as_deref().map(load_embedding_sidecar).transpose()?;
    let mut store = AnnotationStore::from_records(
        &records,
        &pathology.unwrap_or_default(),
        &embeddings.unwrap_or_default(),
    );
    if let Some(path) = &cfg.data.generated_annotations {
        let file = File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        store.extend_text(parse_text_annotations(BufReader::new(file))?);
    }

    let transport: Arc<dyn Transport> = match cfg.transport {
        TransportKind::Http => Arc::new(HttpTransport::new()),
        TransportKind::MockEcho => Arc::new(echo_transport(&tests, cfg.experiment.prompt_style)),
        TransportKind::MockEmpty => Arc::new(ScriptedTransport::fixed("")),
    };
    let client = LlmClient::new(transport, cfg.client.clone()).map_err(|e| HarnessError::Input(e.to_string()))?;
    let scorer = Scorer { annotations: &store, config: &cfg.metrics };

    let run = match mode {
        Mode::Ser2Rep => run_serialization_to_report(&tests, &pool, &cfg.experiment, &client, &scorer).await?,
        Mode::End2End => run_end_to_end(&tests, &pool, &cfg.experiment, &client, &scorer).await?,
    };
    let text = render_table(&run.table, TableFormat::Text);
    let csv = render_table(&run.table, TableFormat::Csv);

    if let Some(dir) = &cfg.data.output_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
        fs::write(dir.join("table.txt"), &text)?;
        fs::write(dir.join("table.csv"), &csv)?;
        let mut lines = String::new();
        for item in &run.items {
            lines.push_str(&serde_json::to_string(item).map_err(|e| HarnessError::Io(e.to_string()))?);
            lines.push('\n');
        }
        fs::write(dir.join("items.jsonl"), lines)?;
    }
    Ok(EvaluateOutput { run, text, csv })
}

/// Recomputes every table cell from persisted item scores.
pub fn recompute_cells(
    items: &[super::experiment::ItemRecord],
    method: &str,
    shots: Option<usize>,
    metrics: &[String],
) -> Result<Vec<Option<crate::metrics::MetricReport>>, HarnessError> {
    let mut by_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for item in items.iter().filter(|i| i.method == method && i.shots == shots) {
        for (m, v) in &item.scores {
            by_metric.entry(m.as_str()).or_default().push(*v);
        }
    }
    metrics
        .iter()
        .map(|m| match by_metric.get(m.as_str()) {
            Some(values) => Ok(Some(crate::metrics::mean_ci(m.clone(), values)?)),
            None => Ok(None),
        })
        .collect()
}
