use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{self, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Ground-truth serialization to report.
    Ser2Rep,
    /// Predicted serialization to report, plus an optional baseline row.
    End2End,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Ser2Rep => "ser2rep",
            Experiment::End2End => "end2end",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ser2rep" => Some(Experiment::Ser2Rep),
            "end2end" => Some(Experiment::End2End),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    /// Number of in-context examples; `None` for rows that do not prompt.
    pub shots: Option<usize>,
    /// One cell per table metric, `None` when nothing could be scored.
    pub cells: Vec<Option<MetricReport>>,
    /// Items dropped before scoring (missing input or failed completion).
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: Experiment,
    pub metrics: Vec<String>,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

fn display_name(metric: &str) -> String {
    match metric {
        metrics::RADCLIQ => "RadCliQ (↓)".into(),
        metrics::RADGRAPH_F1 => "RadGraph F1 (↑)".into(),
        metrics::CHEXBERT => "CheXbert (↑)".into(),
        metrics::BLEU2 => "BLEU (↑)".into(),
        metrics::BERTSCORE => "BERT Score (↑)".into(),
        other => other.to_string(),
    }
}

/// `mean ± halfwidth`, three decimals.
pub fn format_cell(report: &MetricReport) -> String {
    format!("{:.3} ± {:.3}", report.mean, report.ci_halfwidth)
}

pub fn render_table(table: &ResultTable, format: TableFormat) -> String {
    match format {
        TableFormat::Text => render_text(table),
        TableFormat::Csv => render_csv(table),
    }
}

fn render_text(table: &ResultTable) -> String {
    let with_method = table.experiment == Experiment::End2End;
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = Vec::new();
    if with_method {
        header.push("Method".to_string());
    }
    header.push("Examples".to_string());
    header.extend(table.metrics.iter().map(|m| display_name(m)));
    grid.push(header);
    for row in &table.rows {
        let mut line = Vec::new();
        if with_method {
            line.push(row.method.clone());
        }
        line.push(row.shots.map_or_else(|| "-".to_string(), |k| k.to_string()));
        line.extend(row.cells.iter().map(|c| c.as_ref().map_or_else(|| "-".to_string(), format_cell)));
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &grid {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn render_csv(table: &ResultTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["experiment".to_string(), "method".into(), "examples".into(), "excluded".into()];
    for m in &table.metrics {
        header.extend([format!("{m}_mean"), format!("{m}_ci"), format!("{m}_n")]);
    }
    w.write_record(&header).expect("in-memory write");
    for row in &table.rows {
        let mut rec = vec![
            table.experiment.as_str().to_string(),
            row.method.clone(),
            row.shots.map(|k| k.to_string()).unwrap_or_default(),
            row.excluded.to_string(),
        ];
        for cell in &row.cells {
            match cell {
                Some(r) => rec.extend([r.mean.to_string(), r.ci_halfwidth.to_string(), r.n.to_string()]),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// Reads back a table written by [`render_table`] with [`TableFormat::Csv`].
pub fn parse_table_csv(text: &str) -> Result<ResultTable, HarnessError> {
    let bad = |m: String| HarnessError::Input(format!("result CSV: {m}"));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 4 || (header.len() - 4) % 3 != 0 {
        return Err(bad(format!("unexpected column count {}", header.len())));
    }
    let metrics: Vec<String> = header
        .iter()
        .skip(4)
        .step_by(3)
        .map(|h| h.strip_suffix("_mean").map(str::to_string).ok_or_else(|| bad(format!("column {h}"))))
        .collect::<Result<_, _>>()?;
    let mut experiment = None;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let exp = Experiment::parse(&rec[0]).ok_or_else(|| bad(format!("experiment {:?}", &rec[0])))?;
        experiment = Some(exp);
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        let shots = if rec[2].is_empty() { None } else { Some(int(&rec[2])?) };
        let mut cells = Vec::new();
        for (i, m) in metrics.iter().enumerate() {
            let at = 4 + 3 * i;
            cells.push(if rec[at].is_empty() {
                None
            } else {
                Some(MetricReport {
                    name: m.clone(),
                    mean: num(&rec[at])?,
                    ci_halfwidth: num(&rec[at + 1])?,
                    n: int(&rec[at + 2])?,
                })
            });
        }
        rows.push(ResultRow { method: rec[1].to_string(), shots, cells, excluded: int(&rec[3])? });
    }
    Ok(ResultTable { experiment: experiment.unwrap_or(Experiment::Ser2Rep), metrics, rows })
}
