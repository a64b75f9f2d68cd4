use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use radstyle::graph::radgraph_from_value;
use radstyle::harness::{
    assemble_style_eval_sets, evaluate, load_dataset, render_table, score_style_eval, CandidateReport, HarnessConfig,
    Mode, Split, StyleEvalSet, TableFormat,
};
use radstyle::metrics::z_test_proportion;
use radstyle::prompt::{build_prompt_styled, select_examples, PromptStyle, StylePair};
use radstyle::{serialize, SerializerConfig};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "radstyle", version, about = "Serialize RadGraphs, build style prompts and evaluate generated reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serialize RadGraphs from a JSON file (one graph, an array, or an id-keyed map).
    Serialize {
        graphs: PathBuf,
        /// Config file whose [serializer] section overrides the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the K-shot prompt for one serialization as JSON messages.
    Prompt(PromptArgs),
    /// Run an experiment and print its result table.
    Evaluate {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
    /// Blinded style evaluation.
    #[command(subcommand)]
    StyleEval(StyleEvalCommand),
    /// One-sided Wald test of a proportion against p0.
    Ztest {
        #[arg(long)]
        x: u64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        p0: f64,
    },
}

#[derive(Args)]
struct PromptArgs {
    /// JSONL dataset; train records form the example pool.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    shots: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Serialization to generate a report for.
    #[arg(long, conflicts_with = "study")]
    serialization: Option<String>,
    /// Use this study's serialization.
    #[arg(long)]
    study: Option<String>,
    #[arg(long, value_enum, default_value_t = StyleArg::Template)]
    style: StyleArg,
}

#[derive(Subcommand)]
enum StyleEvalCommand {
    /// Build evaluation sets from human and generated reports.
    Assemble {
        /// JSON map of radiologist id to [{study_id, text}].
        #[arg(long)]
        human: PathBuf,
        /// JSON map of radiologist id to [{study_id, text}].
        #[arg(long)]
        generated: PathBuf,
        #[arg(long, default_value_t = 23)]
        sets: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Answer key with the generated positions.
        #[arg(long)]
        key: PathBuf,
        /// Evaluator sheet; printed to stdout when omitted.
        #[arg(long)]
        sheet: Option<PathBuf>,
    },
    /// Score evaluator answers against an answer key.
    Score {
        #[arg(long)]
        key: PathBuf,
        /// JSON map of evaluator to one answer per set ("A".."D" or 0..3).
        #[arg(long)]
        answers: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ser2rep,
    End2end,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Template,
    Bare,
}

fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn graphs_in(doc: &Value) -> Vec<(Option<String>, &Value)> {
    match doc {
        Value::Array(items) => items.iter().map(|g| (None, g)).collect(),
        Value::Object(map) if !map.contains_key("entities") => {
            map.iter().map(|(k, g)| (Some(k.clone()), g)).collect()
        }
        single => vec![(None, single)],
    }
}

fn cmd_serialize(path: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => HarnessConfig::load(p)?.serializer,
        None => SerializerConfig::default(),
    };
    let doc = read_json(path)?;
    for (i, (id, g)) in graphs_in(&doc).into_iter().enumerate() {
        let graph = radgraph_from_value(g).with_context(|| format!("graph {}", id.clone().unwrap_or(i.to_string())))?;
        let s = serialize(&graph, &cfg);
        let line = match id {
            Some(id) => json!({"id": id, "serialization": s.rendered}),
            None => json!({"serialization": s.rendered}),
        };
        emit(&format!("{line}\n"))?;
    }
    Ok(())
}

fn cmd_prompt(args: &PromptArgs) -> Result<()> {
    let records = load_dataset(&args.dataset)?;
    let eval = match (&args.serialization, &args.study) {
        (Some(s), _) => s.clone(),
        (None, Some(id)) => records
            .iter()
            .find(|r| &r.study_id == id)
            .ok_or_else(|| anyhow!("no study {id}"))?
            .serialization()
            .ok_or_else(|| anyhow!("study {id} has no serialization"))?
            .to_string(),
        (None, None) => bail!("pass --serialization or --study"),
    };
    let mut pool: Vec<_> = records.iter().filter(|r| r.split == Split::Train && r.is_usable()).collect();
    pool.sort_by(|a, b| a.study_id.cmp(&b.study_id));
    let pairs: Vec<StylePair> =
        pool.iter().map(|r| StylePair::new(r.serialization().unwrap_or_default(), r.report.clone())).collect();
    let style = match args.style {
        StyleArg::Template => PromptStyle::Template,
        StyleArg::Bare => PromptStyle::Bare,
    };
    let chain = build_prompt_styled(&select_examples(&pairs, args.shots, args.seed)?, &eval, style)?;
    emit(&(serde_json::to_string_pretty(chain.messages())? + "\n"))?;
    Ok(())
}

async fn cmd_evaluate(mode: ModeArg, config: &Path, format: FormatArg) -> Result<ExitCode> {
    let cfg = HarnessConfig::load(config)?;
    let mode = match mode {
        ModeArg::Ser2rep => Mode::Ser2Rep,
        ModeArg::End2end => Mode::End2End,
    };
    let out = evaluate(&cfg, mode).await?;
    match format {
        FormatArg::Text => emit(&out.text)?,
        FormatArg::Csv => emit(&render_table(&out.run.table, TableFormat::Csv))?,
    }
    let failures = out.run.transport_failures();
    if failures > 0 {
        eprintln!("{failures} item(s) failed at the transport layer");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_assemble(
    human: &Path,
    generated: &Path,
    sets: usize,
    seed: u64,
    key: &Path,
    sheet: Option<&Path>,
) -> Result<()> {
    let load = |p: &Path| -> Result<BTreeMap<String, Vec<CandidateReport>>> {
        serde_json::from_value(read_json(p)?).with_context(|| format!("reading reports from {}", p.display()))
    };
    let built = assemble_style_eval_sets(&load(human)?, &load(generated)?, sets, seed)?;
    fs::write(key, serde_json::to_string_pretty(&built)?).with_context(|| format!("writing {}", key.display()))?;
    let text: String = built.iter().enumerate().map(|(i, s)| s.render_for_evaluator(i + 1) + "\n").collect();
    match sheet {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => emit(&text)?,
    }
    Ok(())
}

fn answer_index(v: &Value) -> Result<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|n| n as usize).ok_or_else(|| anyhow!("bad answer {n}")),
        Value::String(s) => match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(0),
            "B" => Ok(1),
            "C" => Ok(2),
            "D" => Ok(3),
            other => bail!("bad answer {other:?}"),
        },
        other => bail!("bad answer {other}"),
    }
}

fn cmd_score(key: &Path, answers: &Path) -> Result<()> {
    let sets: Vec<StyleEvalSet> = serde_json::from_value(read_json(key)?).context("reading answer key")?;
    let raw: BTreeMap<String, Vec<Value>> = serde_json::from_value(read_json(answers)?).context("reading answers")?;
    let mut parsed = BTreeMap::new();
    for (evaluator, picks) in raw {
        let picks = picks.iter().map(answer_index).collect::<Result<Vec<_>>>().with_context(|| evaluator.clone())?;
        parsed.insert(evaluator, picks);
    }
    let score = score_style_eval(&parsed, &sets)?;
    emit(&(serde_json::to_string_pretty(&score)? + "\n"))?;
    Ok(())
}

fn cmd_ztest(x: u64, n: u64, p0: f64) -> Result<()> {
    let t = z_test_proportion(x, n, p0)?;
    emit(&format!("phat = {:.4}  z = {:.4}  p = {:.3}\n", t.phat, t.z, t.p_value))?;
    Ok(())
}

async fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serialize { graphs, config } => cmd_serialize(&graphs, config.as_deref())?,
        Command::Prompt(args) => cmd_prompt(&args)?,
        Command::Evaluate { mode, config, format } => return cmd_evaluate(mode, &config, format).await,
        Command::StyleEval(StyleEvalCommand::Assemble { human, generated, sets, seed, key, sheet }) => {
            cmd_assemble(&human, &generated, sets, seed, &key, sheet.as_deref())?
        }
        Command::StyleEval(StyleEvalCommand::Score { key, answers }) => cmd_score(&key, &answers)?,
        Command::Ztest { x, n, p0 } => cmd_ztest(x, n, p0)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
