use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use discopath::backends::{batch_score, MaskScorer, MockScorer, MockTable, RemoteConfig, RemoteScorer, ScoreRequest};
use discopath::corpus::{ingest, CorpusFormat, Instance};
use discopath::eval::{evaluate, format_report, labelwise_report, render_table, EvalReport, Level};
use discopath::hierarchy::{HierarchyError, LabelHierarchy};
use discopath::mask::MaskSubset;
use discopath::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use discopath::prior::{read_explicit_tsv, PriorMatrix};
use discopath::prompting::{chat_prompt, parse_path, render, ChatKind, PromptTemplate, TemplateVariant, DEFAULT_SOFT_TOKENS};
use discopath::scoring::{predict_with_scores, MaskDistributions, Prediction};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "discopath", version, about = "Hierarchy-path prediction for discourse relations")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect a label hierarchy.
    Hierarchy {
        #[command(subcommand)]
        action: HierarchyCmd,
    },
    /// Build or rank a connective prior.
    Prior {
        #[command(subcommand)]
        action: PriorCmd,
    },
    /// Render prompts for instances.
    Render {
        #[arg(long, default_value = "discoprompt")]
        variant: String,
        #[arg(long, default_value_t = DEFAULT_SOFT_TOKENS)]
        soft_tokens: usize,
        #[command(flatten)]
        input: InstanceInput,
    },
    /// Score paths from distributions or from a backend.
    Score(ScoreArgs),
    /// Render zero-shot chat prompts.
    ChatPrompts {
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        input: InstanceInput,
    },
    /// Map a generated answer to a hierarchy path.
    ParsePath {
        /// Answer text; read from stdin when omitted.
        text: Option<String>,
        #[arg(long, default_value = "pdtb2")]
        hierarchy: String,
    },
    /// Evaluate a prediction dump against a corpus.
    Evaluate {
        #[arg(long)]
        level: String,
        /// JSON-lines predictions with `id` and `top`/`second` fields.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "tsv")]
        corpus_format: String,
        #[arg(long, default_value = "pdtb2")]
        hierarchy: String,
    },
    /// Run a full pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON-lines prediction dump here.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum HierarchyCmd {
    /// Print levels and enumerated paths.
    Show {
        /// Built-in name or path to a config file.
        name: String,
    },
}

#[derive(Subcommand)]
enum PriorCmd {
    /// Count connective/sense pairs from `connective<TAB>sense` lines.
    Build {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value = "pdtb2")]
        hierarchy: String,
    },
    /// Rank connectives per sense from a matrix written by `prior build`.
    Rank {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        /// Connectives listed per sense.
        #[arg(long, default_value_t = 3)]
        top: usize,
    },
}

#[derive(Args)]
struct InstanceInput {
    #[arg(long, default_value = "pdtb2")]
    hierarchy: String,
    #[arg(long, requires = "arg2", conflicts_with = "input")]
    arg1: Option<String>,
    #[arg(long, requires = "arg1")]
    arg2: Option<String>,
    /// JSON lines with `arg1`, `arg2` and optional `id`, `connective`.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, default_value = "pdtb2")]
    hierarchy: String,
    #[arg(long, default_value = "full")]
    subset: String,
    /// JSON lines of per-role distributions (optionally `{"id":..,"probs":{..}}`).
    #[arg(long, conflicts_with = "backend")]
    distributions: Option<PathBuf>,
    #[arg(long, value_parser = ["mock", "remote"])]
    backend: Option<String>,
    /// Mock table file.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value = "discoprompt")]
    variant: String,
    #[arg(long, default_value_t = DEFAULT_SOFT_TOKENS)]
    soft_tokens: usize,
    /// Instances to render and score (JSON lines).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Include every path score in the output.
    #[arg(long)]
    all_scores: bool,
}

/// A failed command and its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const VALIDATION: u8 = 1;
const BACKEND: u8 = 2;
const DATA: u8 = 3;

fn fail(code: u8) -> impl Fn(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

fn validation<E: Into<anyhow::Error>>(e: E) -> Failure {
    fail(VALIDATION)(e.into())
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    fail(DATA)(e.into())
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors are validation errors, not clap's default status 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { VALIDATION } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    let fmt = cli.format;
    match &cli.command {
        Command::Hierarchy { action: HierarchyCmd::Show { name } } => hierarchy_show(fmt, name),
        Command::Prior { action } => match action {
            PriorCmd::Build { input, alpha, hierarchy } => prior_build(fmt, input, *alpha, hierarchy),
            PriorCmd::Rank { matrix, alpha, top } => prior_rank(fmt, matrix, *alpha, *top),
        },
        Command::Render { variant, soft_tokens, input } => render_cmd(fmt, variant, *soft_tokens, input),
        Command::Score(args) => score_cmd(fmt, args),
        Command::ChatPrompts { kind, input } => chat_cmd(fmt, kind, input),
        Command::ParsePath { text, hierarchy } => parse_cmd(fmt, text.as_deref(), hierarchy),
        Command::Evaluate { level, predictions, corpus, corpus_format, hierarchy } => {
            evaluate_cmd(fmt, level, predictions, corpus, corpus_format, hierarchy)
        }
        Command::Run { config, predictions } => run_cmd(fmt, config, predictions.as_deref()),
    }
}

/// Write errors other than a closed pipe are data errors.
fn written(r: io::Result<()>) -> CmdResult {
    match r {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(data(e)),
        _ => Ok(()),
    }
}

fn emit(value: &Value) -> CmdResult {
    let mut out = io::stdout().lock();
    written(writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json")))
}

fn emit_text(text: &str) -> CmdResult {
    let mut out = io::stdout().lock();
    let nl = if text.ends_with('\n') { "" } else { "\n" };
    written(write!(out, "{text}{nl}"))
}

fn load_hierarchy(spec: &str) -> Result<LabelHierarchy, Failure> {
    LabelHierarchy::load(spec).map_err(|e| match e {
        HierarchyError::Io(_) => data(e),
        other => validation(other),
    })
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(data)
}

fn read_jsonl(path: &Path) -> Result<Vec<Value>, Failure> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(data)?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: invalid JSON", path.display(), i + 1))
            .map_err(data)?;
        out.push(v);
    }
    Ok(out)
}

fn instances(input: &InstanceInput) -> Result<Vec<Instance>, Failure> {
    if let (Some(a1), Some(a2)) = (&input.arg1, &input.arg2) {
        return Ok(vec![Instance::implicit("cli", a1.as_str(), a2.as_str())]);
    }
    let path = input
        .input
        .as_ref()
        .ok_or_else(|| validation(anyhow!("provide --arg1/--arg2 or --input")))?;
    instances_from(path)
}

fn instances_from(path: &Path) -> Result<Vec<Instance>, Failure> {
    read_jsonl(path)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let field = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
            let (Some(a1), Some(a2)) = (field("arg1"), field("arg2")) else {
                return Err(data(anyhow!("{} record {}: missing arg1/arg2", path.display(), i + 1)));
            };
            let mut inst = Instance::implicit(field("id").unwrap_or_else(|| format!("line{}", i + 1)), a1, a2);
            inst.connective = field("connective");
            Ok(inst)
        })
        .collect()
}

fn hierarchy_show(fmt: Format, name: &str) -> CmdResult {
    let h = load_hierarchy(name)?;
    if fmt == Format::Table {
        return emit_text(&h.to_string());
    }
    let levels: Vec<Value> = (1..=h.depth())
        .map(|d| json!({"depth": d, "labels": h.labels_at(d).unwrap(), "surfaces": h.surfaces_at(d).unwrap()}))
        .collect();
    let paths: Vec<Value> = h
        .paths()
        .iter()
        .map(|p| json!({"id": p.id, "path": h.path_string(p), "labels": h.path_labels(p)}))
        .collect();
    emit(&json!({"name": h.name(), "comment": h.comment(), "depth": h.depth(), "levels": levels, "paths": paths}))
}

fn prior_build(fmt: Format, input: &Path, alpha: f64, hierarchy: &str) -> CmdResult {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(validation(anyhow!("alpha must be a finite non-negative number")));
    }
    let h = load_hierarchy(hierarchy)?;
    let (records, mut rejects) = read_explicit_tsv(open(input)?).map_err(data)?;
    let acc = PriorMatrix::accumulate(&h, records, alpha);
    rejects.extend(acc.rejects);
    for r in &rejects {
        log::warn!("record {} rejected: {}", r.index, r.reason);
    }
    let m = acc.matrix;
    if fmt == Format::Table {
        let mut header = vec!["connective"];
        header.extend(m.senses.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = m
            .connectives
            .iter()
            .zip(&m.counts)
            .map(|(c, row)| std::iter::once(c.clone()).chain(row.iter().map(u64::to_string)).collect())
            .collect();
        return emit_text(&render_table(&header, &rows));
    }
    let mut v = serde_json::to_value(&m).expect("json");
    v["rejected"] = json!(rejects.len());
    emit(&v)
}

fn prior_rank(fmt: Format, matrix: &Path, alpha: Option<f64>, top: usize) -> CmdResult {
    let mut text = String::new();
    open(matrix)?.read_to_string(&mut text).map_err(data)?;
    let mut m = PriorMatrix::from_json(&text).map_err(data)?;
    if let Some(a) = alpha {
        m = m.with_alpha(a);
    }
    m.validate().map_err(validation)?;
    let ranking = m.rank_connectives();
    if fmt == Format::Table {
        let rows: Vec<Vec<String>> = ranking
            .per_sense
            .iter()
            .flat_map(|s| {
                s.connectives
                    .iter()
                    .take(top)
                    .enumerate()
                    .map(|(i, (c, p))| vec![s.sense.clone(), (i + 1).to_string(), c.clone(), format!("{p:.4}")])
                    .collect::<Vec<_>>()
            })
            .collect();
        return emit_text(&render_table(&["sense", "rank", "connective", "p(sense|conn)"], &rows));
    }
    let v: Vec<Value> = ranking
        .per_sense
        .iter()
        .map(|s| json!({"sense": s.sense, "connectives": s.connectives.iter().take(top).collect::<Vec<_>>()}))
        .collect();
    emit(&json!(v))
}

fn template(variant: &str, soft: usize) -> Result<PromptTemplate, Failure> {
    let v: TemplateVariant = variant.parse().map_err(validation)?;
    Ok(PromptTemplate::new(v, soft))
}

fn render_cmd(fmt: Format, variant: &str, soft: usize, input: &InstanceInput) -> CmdResult {
    let h = load_hierarchy(&input.hierarchy)?;
    let t = template(variant, soft)?;
    let mut out = Vec::new();
    for inst in instances(input)? {
        let t = match &inst.connective {
            Some(c) => t.with_connective(c),
            None => t.clone(),
        };
        let r = render(&t, &inst, &h)
            .with_context(|| format!("instance {}", inst.id))
            .map_err(validation)?;
        out.push((inst.id, r));
    }
    if fmt == Format::Table {
        let text: Vec<String> = out.iter().map(|(_, r)| r.text.clone()).collect();
        return emit_text(&text.join("\n\n"));
    }
    let v: Vec<Value> = out
        .into_iter()
        .map(|(id, r)| {
            let digest = ScoreRequest::from_rendered(None, &r).digest();
            json!({"id": id, "text": r.text, "mask_spans": r.mask_spans, "candidates": r.candidate_sets, "digest": digest})
        })
        .collect();
    emit(&json!(v))
}

fn prediction_json(id: &str, p: &Prediction, h: &LabelHierarchy, all: bool) -> Value {
    let path = h.path(p.path_id).expect("path");
    let mut v = json!({
        "id": id,
        "path_id": p.path_id,
        "path": h.path_string(path),
        "top": p.top(),
        "second": p.second(),
        "connective": p.connective(),
        "score": p.score,
    });
    if all {
        v["scores"] = json!(p.all_scores.as_ref().map(|s| s.iter().map(|x| x.score).collect::<Vec<_>>()));
    }
    v
}

fn score_cmd(fmt: Format, a: &ScoreArgs) -> CmdResult {
    let h = load_hierarchy(&a.hierarchy)?;
    let subset: MaskSubset = a.subset.parse().map_err(validation)?;
    let mut results: Vec<Value> = Vec::new();
    let mut backend_failures = 0;

    if let Some(path) = &a.distributions {
        for (i, v) in read_jsonl(path)?.into_iter().enumerate() {
            let id = v.get("id").and_then(Value::as_str).map_or_else(|| format!("line{}", i + 1), str::to_string);
            let probs = v.get("probs").cloned().unwrap_or(v);
            let d: MaskDistributions = serde_json::from_value(probs)
                .with_context(|| format!("record {id}"))
                .map_err(data)?;
            let p = predict_with_scores(&d, &h, &subset)
                .with_context(|| format!("record {id}"))
                .map_err(validation)?;
            results.push(prediction_json(&id, &p, &h, a.all_scores));
        }
    } else {
        let backend: Box<dyn MaskScorer> = match a.backend.as_deref() {
            Some("mock") => {
                let path = a.table.as_ref().ok_or_else(|| validation(anyhow!("--backend mock needs --table")))?;
                let mut text = String::new();
                open(path)?.read_to_string(&mut text).map_err(data)?;
                Box::new(MockScorer::new(MockTable::from_json(&text).map_err(data)?).map_err(data)?)
            }
            Some("remote") => {
                let endpoint = a
                    .endpoint
                    .clone()
                    .ok_or_else(|| validation(anyhow!("--backend remote needs --endpoint")))?;
                let mut cfg = RemoteConfig::new(endpoint);
                cfg.timeout_ms = a.timeout_ms;
                cfg.retries = a.retries;
                cfg.concurrency = a.concurrency;
                Box::new(RemoteScorer::new(cfg).map_err(|e| fail(BACKEND)(e.into()))?)
            }
            _ => return Err(validation(anyhow!("provide --distributions or --backend"))),
        };
        let input = a.input.as_ref().ok_or_else(|| validation(anyhow!("--backend needs --input")))?;
        let t = template(&a.variant, a.soft_tokens)?;
        let insts = instances_from(input)?;
        let reqs = insts
            .iter()
            .map(|inst| {
                render(&t, inst, &h)
                    .map(|r| ScoreRequest::from_rendered(Some(inst.id.clone()), &r))
                    .with_context(|| format!("instance {}", inst.id))
                    .map_err(validation)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let batch = batch_score(backend.as_ref(), &reqs);
        for (inst, r) in insts.iter().zip(batch.results) {
            let line = match r {
                Ok(resp) => match predict_with_scores(&resp.into_distributions(), &h, &subset) {
                    Ok(p) => prediction_json(&inst.id, &p, &h, a.all_scores),
                    Err(e) => return Err(validation(anyhow!("instance {}: {e}", inst.id))),
                },
                Err(e) => {
                    backend_failures += 1;
                    json!({"id": inst.id, "error": {"kind": e.kind(), "message": e.to_string()}})
                }
            };
            results.push(line);
        }
    }

    if fmt == Format::Table {
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|v| {
                let s = |k: &str| v.get(k).map_or(String::new(), |x| x.as_str().map_or(x.to_string(), str::to_string));
                match v.get("error") {
                    Some(e) => vec![s("id"), format!("error: {}", e["message"].as_str().unwrap_or_default()), String::new()],
                    None => vec![s("id"), s("path"), format!("{:.6e}", v["score"].as_f64().unwrap_or(0.0))],
                }
            })
            .collect();
        emit_text(&render_table(&["id", "path", "score"], &rows))?;
    } else {
        let mut out = io::stdout().lock();
        for v in &results {
            written(writeln!(out, "{v}"))?;
        }
    }
    if backend_failures > 0 {
        return Err(fail(BACKEND)(anyhow!("{backend_failures} of {} requests failed", results.len())));
    }
    Ok(())
}

fn chat_cmd(fmt: Format, kind: &str, input: &InstanceInput) -> CmdResult {
    let h = load_hierarchy(&input.hierarchy)?;
    let kind: ChatKind = kind.parse().map_err(validation)?;
    let mut prompts = Vec::new();
    for inst in instances(input)? {
        let text = chat_prompt(kind, &inst, &h)
            .with_context(|| format!("instance {}", inst.id))
            .map_err(validation)?;
        prompts.push((inst.id, text));
    }
    if fmt == Format::Table {
        let text: Vec<&str> = prompts.iter().map(|(_, t)| t.as_str()).collect();
        return emit_text(&text.join("\n\n"));
    }
    let v: Vec<Value> = prompts.into_iter().map(|(id, p)| json!({"id": id, "prompt": p})).collect();
    emit(&json!(v))
}

fn parse_cmd(fmt: Format, text: Option<&str>, hierarchy: &str) -> CmdResult {
    let h = load_hierarchy(hierarchy)?;
    let text = match text {
        Some(t) => t.to_string(),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).map_err(data)?;
            s
        }
    };
    let p = parse_path(&text, &h).map_err(validation)?;
    let labels = h.path_labels(p);
    if fmt == Format::Table {
        return emit_text(&h.path_string(p));
    }
    emit(&json!({
        "path_id": p.id,
        "path": h.path_string(p),
        "top": labels[0],
        "second": labels[1],
        "connective": labels.last(),
    }))
}

fn evaluate_cmd(fmt: Format, level: &str, predictions: &Path, corpus: &Path, corpus_format: &str, hierarchy: &str) -> CmdResult {
    let level: Level = level.parse().map_err(validation)?;
    let h = load_hierarchy(hierarchy)?;
    let format: CorpusFormat = corpus_format.parse().map_err(validation)?;
    let ingested = ingest(corpus, format, &h).map_err(data)?;
    let mut by_id: BTreeMap<String, Option<String>> = BTreeMap::new();
    for v in read_jsonl(predictions)? {
        let id = v
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| data(anyhow!("prediction without id")))?;
        let label = v.get(level.as_str()).and_then(Value::as_str).map(str::to_string);
        by_id.insert(id.to_string(), label);
    }
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for inst in ingested.implicit.iter().chain(&ingested.explicit) {
        if let Some(p) = by_id.get(&inst.id) {
            preds.push(p.clone());
            golds.push(inst.gold_labels(level.depth()));
        }
    }
    if preds.len() < by_id.len() {
        log::warn!("{} predictions have no matching corpus instance", by_id.len() - preds.len());
    }
    let report = evaluate(&preds, &golds, level).map_err(validation)?;
    if fmt == Format::Table {
        return emit_text(&format!("{}\n{}", format_report(&report), labelwise_report(&report, &h)));
    }
    emit(&serde_json::to_value(&report).expect("json"))
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match &e {
        PipelineError::Config(_) | PipelineError::Eval(_) => VALIDATION,
        PipelineError::Io { .. } | PipelineError::Hierarchy(HierarchyError::Io(_)) | PipelineError::Corpus(_) => DATA,
        PipelineError::Hierarchy(_) => VALIDATION,
        PipelineError::Backend(_) => BACKEND,
    };
    fail(code)(e.into())
}

fn report_table(r: &EvalReport, h: &LabelHierarchy) -> String {
    format!("{}\n{}", format_report(r), labelwise_report(r, h))
}

fn run_cmd(fmt: Format, config: &Path, predictions: Option<&Path>) -> CmdResult {
    let cfg = PipelineConfig::from_file(config).map_err(pipeline_failure)?;
    let out = run_pipeline(&cfg).map_err(pipeline_failure)?;
    if let Some(path) = predictions {
        std::fs::write(path, out.predictions_jsonl())
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(data)?;
    }
    if fmt == Format::Table {
        let h = load_hierarchy(&cfg.hierarchy)?;
        let failures: Vec<String> = out.failures.iter().map(|(k, n)| format!("{k}: {n}")).collect();
        emit_text(&format!(
            "evaluated: {}\nfailures: {}\n\n{}\n{}",
            out.evaluated,
            if failures.is_empty() { "none".into() } else { failures.join(", ") },
            report_table(&out.top, &h),
            report_table(&out.second, &h),
        ))?;
    } else {
        emit(&serde_json::to_value(&out).expect("json"))?;
    }
    let backend_failures: usize = out
        .failures
        .iter()
        .filter(|(k, _)| k.starts_with("backend_"))
        .map(|(_, n)| n)
        .sum();
    if backend_failures > 0 {
        return Err(fail(BACKEND)(anyhow!("{backend_failures} instances failed at the backend")));
    }
    Ok(())
}
