use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::dataset::{SerializationSource, StudyRecord};
use super::scoring::Scorer;
use super::table::{Experiment, ResultRow, ResultTable};
use super::HarnessError;
use crate::llm::{LlmClient, LlmError};
use crate::metrics::{mean_ci, METRIC_COLUMNS};
use crate::prompt::{build_prompt_styled, select_examples, PromptChain, PromptStyle, StylePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// In-context example counts to sweep, one table row each.
    pub shots: Vec<usize>,
    pub seed: u64,
    /// Table columns, in order.
    pub metrics: Vec<String>,
    pub prompt_style: PromptStyle,
    /// Draw examples only from the evaluated study's radiologist.
    pub match_radiologist: bool,
    /// Maximum concurrent completions.
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            shots: vec![0, 1, 5, 10],
            seed: 42,
            metrics: METRIC_COLUMNS.iter().map(|s| s.to_string()).collect(),
            prompt_style: PromptStyle::Template,
            match_radiologist: false,
            parallelism: 4,
        }
    }
}

/// Per-item outcome, persisted so table statistics can be recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub method: String,
    pub shots: Option<usize>,
    pub study_id: String,
    pub serialization_source: SerializationSource,
    pub generated: Option<String>,
    pub error: Option<String>,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub table: ResultTable,
    pub items: Vec<ItemRecord>,
}

impl ExperimentRun {
    pub fn transport_failures(&self) -> usize {
        self.items.iter().filter(|i| i.error.as_deref().is_some_and(|e| e.starts_with("transport"))).count()
    }
}

/// Per-study seed so every evaluated item gets its own reproducible draw.
pub fn item_seed(seed: u64, study_id: &str) -> u64 {
    // FNV-1a, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in study_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_disjoint(records: &[StudyRecord], pool: &[StudyRecord]) -> Result<(), HarnessError> {
    let pool_ids: HashSet<&str> = pool.iter().map(|r| r.study_id.as_str()).collect();
    let mut shared: Vec<&str> = records
        .iter()
        .map(|r| r.study_id.as_str())
        .filter(|id| pool_ids.contains(id))
        .collect();
    if shared.is_empty() {
        return Ok(());
    }
    shared.sort_unstable();
    Err(HarnessError::Input(format!(
        "example pool and evaluation set share study ids: {}",
        shared.join(", ")
    )))
}

fn sorted_by_id(records: &[StudyRecord]) -> Vec<&StudyRecord> {
    let mut v: Vec<&StudyRecord> = records.iter().collect();
    v.sort_by(|a, b| a.study_id.cmp(&b.study_id));
    v
}

fn aggregate(
    cfg: &ExperimentConfig,
    method: &str,
    shots: Option<usize>,
    items: &[ItemRecord],
) -> Result<ResultRow, HarnessError> {
    let mut cells = Vec::with_capacity(cfg.metrics.len());
    for m in &cfg.metrics {
        let values: Vec<f64> = items.iter().filter_map(|i| i.scores.get(m).copied()).collect();
        cells.push(if values.is_empty() { None } else { Some(mean_ci(m.clone(), &values)?) });
    }
    let excluded = items.iter().filter(|i| i.generated.is_none()).count();
    Ok(ResultRow { method: method.to_string(), shots, cells, excluded })
}

fn excluded_item(method: &str, shots: Option<usize>, r: &StudyRecord, error: String) -> ItemRecord {
    ItemRecord {
        method: method.to_string(),
        shots,
        study_id: r.study_id.clone(),
        serialization_source: r.serialization_source,
        generated: None,
        error: Some(error),
        scores: BTreeMap::new(),
    }
}

fn error_label(e: &LlmError) -> String {
    match e {
        LlmError::Transport { .. } => format!("transport: {e}"),
        _ => e.to_string(),
    }
}

/// Runs the shot sweep for one method over `records`, reading each item's
/// prompt serialization from the record.
async fn sweep(
    method: &str,
    records: &[StudyRecord],
    pool: &[StudyRecord],
    cfg: &ExperimentConfig,
    client: &LlmClient,
    scorer: &Scorer<'_>,
) -> Result<(Vec<ResultRow>, Vec<ItemRecord>), HarnessError> {
    check_disjoint(records, pool)?;
    let pool: Vec<(&StudyRecord, StylePair)> = sorted_by_id(pool)
        .into_iter()
        .filter(|r| r.is_usable())
        .map(|r| (r, StylePair::new(r.serialization().unwrap_or_default(), r.report.clone())))
        .collect();
    let mut by_radiologist: HashMap<Option<&str>, Vec<StylePair>> = HashMap::new();
    for (r, pair) in &pool {
        by_radiologist.entry(r.radiologist_id.as_deref()).or_default().push(pair.clone());
    }
    let all_pairs: Vec<StylePair> = pool.into_iter().map(|(_, p)| p).collect();
    let records = sorted_by_id(records);

    let mut rows = Vec::new();
    let mut all_items = Vec::new();
    for &k in &cfg.shots {
        let mut items: Vec<Option<ItemRecord>> = Vec::with_capacity(records.len());
        let mut chains: Vec<PromptChain> = Vec::new();
        let mut chain_owner: Vec<usize> = Vec::new();
        for (ix, r) in records.iter().enumerate() {
            let Some(ser) = r.serialization() else {
                items.push(Some(excluded_item(method, Some(k), r, "missing serialization".into())));
                continue;
            };
            let candidates: &[StylePair] = if cfg.match_radiologist {
                by_radiologist.get(&r.radiologist_id.as_deref()).map_or(&[], Vec::as_slice)
            } else {
                &all_pairs
            };
            let examples = select_examples(candidates, k, item_seed(cfg.seed, &r.study_id))
                .map_err(|e| HarnessError::Input(format!("study {}: {e}", r.study_id)))?;
            let chain = build_prompt_styled(&examples, ser, cfg.prompt_style)
                .map_err(|e| HarnessError::Input(format!("study {}: {e}", r.study_id)))?;
            chains.push(chain);
            chain_owner.push(ix);
            items.push(None);
        }
        let results = client.complete_batch(&chains, cfg.parallelism).await;
        for (owner, result) in chain_owner.into_iter().zip(results) {
            let r = records[owner];
            items[owner] = Some(match result {
                Ok(done) => ItemRecord {
                    method: method.to_string(),
                    shots: Some(k),
                    study_id: r.study_id.clone(),
                    serialization_source: r.serialization_source,
                    scores: scorer.score(r, &done.text),
                    generated: Some(done.text),
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(study = %r.study_id, error = %e, "completion failed");
                    excluded_item(method, Some(k), r, error_label(&e))
                }
            });
        }
        let items: Vec<ItemRecord> = items.into_iter().map(|i| i.expect("every slot filled")).collect();
        rows.push(aggregate(cfg, method, Some(k), &items)?);
        all_items.extend(items);
    }
    Ok((rows, all_items))
}

/// Prompts with ground-truth serializations and scores the generations
/// against the reference reports; one row per shot count.
pub async fn run_serialization_to_report(
    records: &[StudyRecord],
    pool: &[StudyRecord],
    cfg: &ExperimentConfig,
    client: &LlmClient,
    scorer: &Scorer<'_>,
) -> Result<ExperimentRun, HarnessError> {
    let (rows, items) = sweep("ser2rep", records, pool, cfg, client, scorer).await?;
    Ok(ExperimentRun {
        table: ResultTable { experiment: Experiment::Ser2Rep, metrics: cfg.metrics.clone(), rows },
        items,
    })
}

/// Prompts with model-predicted serializations. Records without one are
/// excluded. A baseline row scores the records' direct image-to-report
/// predictions, when any are supplied, with the same metrics.
pub async fn run_end_to_end(
    records: &[StudyRecord],
    pool: &[StudyRecord],
    cfg: &ExperimentConfig,
    client: &LlmClient,
    scorer: &Scorer<'_>,
) -> Result<ExperimentRun, HarnessError> {
    let mut rows = Vec::new();
    let mut items = Vec::new();
    check_disjoint(records, pool)?;
    let baseline: Vec<ItemRecord> = sorted_by_id(records)
        .into_iter()
        .map(|r| match r.baseline_report.as_deref() {
            Some(text) => ItemRecord {
                method: "baseline".into(),
                shots: None,
                study_id: r.study_id.clone(),
                serialization_source: r.serialization_source,
                generated: Some(text.to_string()),
                error: None,
                scores: scorer.score(r, text),
            },
            None => excluded_item("baseline", None, r, "missing baseline report".into()),
        })
        .collect();
    if baseline.iter().any(|i| i.generated.is_some()) {
        rows.push(aggregate(cfg, "baseline", None, &baseline)?);
        items.extend(baseline);
    }
    let (sweep_rows, sweep_items) = sweep("two-step", records, pool, cfg, client, scorer).await?;
    rows.extend(sweep_rows);
    items.extend(sweep_items);
    Ok(ExperimentRun {
        table: ResultTable { experiment: Experiment::End2End, metrics: cfg.metrics.clone(), rows },
        items,
    })
}
