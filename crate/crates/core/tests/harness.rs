use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use radstyle::harness::config::recompute_cells;
use radstyle::harness::{
    evaluate, load_dataset, parse_table_csv, render_table, run_serialization_to_report, AnnotationStore,
    ExperimentConfig, HarnessConfig, HarnessError, ItemRecord, MetricsConfig, Mode, ResultTable, Scorer, Split,
    TableFormat,
};
use radstyle::llm::mock::ScriptedTransport;
use radstyle::llm::{ClientConfig, LlmClient};
use radstyle::metrics::{BLEU2, RADGRAPH_F1};
use radstyle_testkit::{synthetic_dataset, toy_embedding};
use serde_json::Value;
use tempfile::TempDir;

fn write_jsonl(path: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

fn write_fixture(dir: &Path, lines: &[Value], transport: &str, out: &str) -> HarnessConfig {
    write_jsonl(&dir.join("studies.jsonl"), lines);
    let embeddings: BTreeMap<String, Vec<Vec<f64>>> = lines
        .iter()
        .map(|l| (l["study_id"].as_str().unwrap().to_string(), toy_embedding(l["report"].as_str().unwrap(), 8)))
        .collect();
    fs::write(dir.join("embeddings.json"), serde_json::to_string(&embeddings).unwrap()).unwrap();
    let cfg = format!(
        "transport = \"{transport}\"\n[data]\ndataset = \"studies.jsonl\"\nembeddings = \"embeddings.json\"\noutput_dir = \"{out}\"\n[experiment]\nseed = 7\n"
    );
    fs::write(dir.join("run.toml"), cfg).unwrap();
    HarnessConfig::load(&dir.join("run.toml")).unwrap()
}

fn column(table: &ResultTable, metric: &str) -> usize {
    table.metrics.iter().position(|m| m == metric).unwrap()
}

#[tokio::test]
async fn identity_mock_scores_perfectly() {
    let dir = TempDir::new().unwrap();
    let cfg = write_fixture(dir.path(), &synthetic_dataset(20, 30, 1), "mock-echo", "out");
    let out = evaluate(&cfg, Mode::Ser2Rep).await.unwrap();
    let t = &out.run.table;
    assert_eq!(t.rows.iter().map(|r| r.shots).collect::<Vec<_>>(), [Some(0), Some(1), Some(5), Some(10)]);
    for row in &t.rows {
        assert_eq!(row.excluded, 0);
        for cell in row.cells.iter() {
            let cell = cell.as_ref().expect("every metric is scored");
            assert_eq!(cell.n, 30);
        }
        for m in [BLEU2, RADGRAPH_F1, "chexbert", "bertscore"] {
            let c = row.cells[column(t, m)].as_ref().unwrap();
            assert!((c.mean - 1.0).abs() <= 1e-12, "{m}: {}", c.mean);
            assert!(c.ci_halfwidth.abs() <= 1e-12, "{m}: {}", c.ci_halfwidth);
        }
    }
    assert!(out.text.contains("1.000 ± 0.000"));
    assert!(dir.path().join("out/table.csv").exists());
}

#[tokio::test]
async fn empty_mock_scores_zero_bleu() {
    let dir = TempDir::new().unwrap();
    let cfg = write_fixture(dir.path(), &synthetic_dataset(12, 10, 2), "mock-empty", "out");
    let t = evaluate(&cfg, Mode::Ser2Rep).await.unwrap().run.table;
    for row in &t.rows {
        assert_eq!(row.cells[column(&t, BLEU2)].as_ref().unwrap().mean, 0.0);
        assert_eq!(row.cells[column(&t, RADGRAPH_F1)].as_ref().unwrap().mean, 0.0);
    }
}

#[tokio::test]
async fn end_to_end_with_identity_matches_ser2rep() {
    let dir = TempDir::new().unwrap();
    let mut lines = synthetic_dataset(12, 10, 3);
    for l in &mut lines {
        l["serialization_source"] = "predicted".into();
    }
    let cfg = write_fixture(dir.path(), &lines, "mock-echo", "out");
    let a = evaluate(&cfg, Mode::Ser2Rep).await.unwrap().run.table;
    let b = evaluate(&cfg, Mode::End2End).await.unwrap().run.table;
    assert_eq!(b.rows.len(), a.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(y.method, "two-step");
        assert_eq!(x.cells, y.cells);
        assert_eq!(x.shots, y.shots);
    }
}

#[tokio::test]
async fn baseline_row_when_predictions_supplied() {
    let dir = TempDir::new().unwrap();
    let mut lines = synthetic_dataset(12, 10, 4);
    for l in lines.iter_mut().filter(|l| l["split"] == "test") {
        l["baseline_report"] = l["report"].clone();
    }
    let cfg = write_fixture(dir.path(), &lines, "mock-echo", "out");
    let out = evaluate(&cfg, Mode::End2End).await.unwrap();
    let t = &out.run.table;
    assert_eq!(t.rows.len(), 5);
    assert_eq!((t.rows[0].method.as_str(), t.rows[0].shots), ("baseline", None));
    assert_eq!(t.rows[0].cells[column(t, BLEU2)].as_ref().unwrap().mean, 1.0);
    assert!(out.text.lines().next().unwrap().starts_with("Method"));
}

#[tokio::test]
async fn missing_predicted_serialization_is_excluded() {
    let dir = TempDir::new().unwrap();
    let mut lines = synthetic_dataset(12, 10, 5);
    for l in &mut lines {
        l["serialization_source"] = "predicted".into();
    }
    let mut dropped = 0;
    for l in lines.iter_mut().filter(|l| l["split"] == "test").take(3) {
        l.as_object_mut().unwrap().remove("serialization");
        dropped += 1;
    }
    let cfg = write_fixture(dir.path(), &lines, "mock-echo", "out");
    let t = evaluate(&cfg, Mode::End2End).await.unwrap().run.table;
    for row in &t.rows {
        assert_eq!(row.excluded, dropped);
        assert_eq!(row.cells[column(&t, BLEU2)].as_ref().unwrap().n, 10 - dropped);
    }
}

#[tokio::test]
async fn overlapping_pool_aborts() {
    let dir = TempDir::new().unwrap();
    write_jsonl(&dir.path().join("d.jsonl"), &synthetic_dataset(12, 4, 6));
    let records = load_dataset(&dir.path().join("d.jsonl")).unwrap();
    let pool: Vec<_> = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
    let mut tests: Vec<_> = records.iter().filter(|r| r.split == Split::Test).cloned().collect();
    tests.push(pool[3].clone());
    let store = AnnotationStore::from_records(&records, &BTreeMap::new(), &BTreeMap::new());
    let metrics = MetricsConfig::default();
    let scorer = Scorer { annotations: &store, config: &metrics };
    let client = LlmClient::new(Arc::new(ScriptedTransport::fixed("x")), ClientConfig::default()).unwrap();
    let err = run_serialization_to_report(&tests, &pool, &ExperimentConfig::default(), &client, &scorer)
        .await
        .unwrap_err();
    assert!(matches!(&err, HarnessError::Input(m) if m.contains(&pool[3].study_id)), "{err}");
}

#[tokio::test]
async fn small_pool_is_input_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_fixture(dir.path(), &synthetic_dataset(4, 4, 7), "mock-echo", "out");
    let err = evaluate(&cfg, Mode::Ser2Rep).await.unwrap_err();
    assert!(matches!(err, HarnessError::Input(_)), "{err}");
}

fn read_items(path: &Path) -> Vec<ItemRecord> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[tokio::test]
async fn outputs_are_byte_reproducible_and_auditable() {
    let dir = TempDir::new().unwrap();
    let lines = synthetic_dataset(20, 30, 8);
    let cfg_a = write_fixture(dir.path(), &lines, "mock-echo", "a");
    let mut cfg_b = cfg_a.clone();
    cfg_b.data.output_dir = Some(dir.path().join("b"));
    let first = evaluate(&cfg_a, Mode::Ser2Rep).await.unwrap();
    evaluate(&cfg_b, Mode::Ser2Rep).await.unwrap();
    for f in ["table.txt", "table.csv", "items.jsonl"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }

    let items = read_items(&dir.path().join("a/items.jsonl"));
    let table = parse_table_csv(&fs::read_to_string(dir.path().join("a/table.csv")).unwrap()).unwrap();
    assert_eq!(table, first.run.table);
    for row in &table.rows {
        assert_eq!(recompute_cells(&items, &row.method, row.shots, &table.metrics).unwrap(), row.cells);
    }
    assert_eq!(render_table(&table, TableFormat::Text), first.text);
}

#[tokio::test]
async fn shot_rows_use_distinct_examples() {
    let dir = TempDir::new().unwrap();
    let lines = synthetic_dataset(20, 5, 9);
    let cfg = write_fixture(dir.path(), &lines, "mock-echo", "out");
    let out = evaluate(&cfg, Mode::Ser2Rep).await.unwrap();
    assert_eq!(out.run.items.len(), 4 * 5);
    assert_eq!(out.run.transport_failures(), 0);
}

#[test]
fn duplicate_study_reports_its_line() {
    let dir = TempDir::new().unwrap();
    let mut lines = synthetic_dataset(6, 2, 10);
    lines[6]["study_id"] = lines[1]["study_id"].clone();
    write_jsonl(&dir.path().join("d.jsonl"), &lines);
    let err = load_dataset(&dir.path().join("d.jsonl")).unwrap_err();
    assert!(matches!(err, HarnessError::Schema { line: 7, .. }), "{err}");
}
