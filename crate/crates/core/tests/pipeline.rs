mod common;

use common::fixture;
use discopath::backends::{MockScorer, MockTable};
use discopath::mask::MaskSubset;
use discopath::pipeline::{run_pipeline, run_pipeline_with, Mode, PipelineConfig, PipelineError};
use discopath::prompting::TemplateVariant;

fn config() -> PipelineConfig {
    PipelineConfig::from_file(fixture("pipeline.json")).unwrap()
}

#[test]
fn gold_point_mass_everywhere_is_perfect() {
    let cfg = config();
    let table = MockTable::from_json(&std::fs::read_to_string(fixture("pipeline_mock.json")).unwrap()).unwrap();
    let out = run_pipeline_with(&cfg, &MockScorer::new(table).unwrap()).unwrap();
    let dump = out.predictions_jsonl();
    let lines: Vec<serde_json::Value> = dump.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 50);
    assert_eq!(lines[0]["id"], "p00");
    assert_eq!(lines[0]["path"], "Comparison -> Contrast -> however");
    assert_eq!(lines[0]["connective"], "however");
    assert_eq!(lines[0]["score"], 1.0);
    // the uniform tail predicts path 0
    assert_eq!(lines[45]["path"], "Comparison -> Concession -> if");
    assert!(out.failures.is_empty());
    assert_eq!(out.split.train, 6);
}

#[test]
fn uniform_defaults_predict_first_path() {
    let cfg = config();
    let mut table = MockTable::from_json(&std::fs::read_to_string(fixture("pipeline_mock.json")).unwrap()).unwrap();
    table.overrides.clear();
    let out = run_pipeline_with(&cfg, &MockScorer::new(table).unwrap()).unwrap();
    assert!(out.predictions.iter().all(|l| l.contains("\"second\":\"Concession\"")));
    // gold: Comparison 10, Contingency 15, Expansion 15, Temporal 10
    assert_eq!(out.top.accuracy, 0.2);
    assert!((out.top.macro_f1 - (2.0 * 0.2 / 1.2) / 4.0).abs() < 1e-12);
    assert_eq!(out.second.accuracy, 0.0);
    assert_eq!(out.second.macro_f1, 0.0);
}

#[test]
fn missing_role_is_tallied_not_fatal() {
    let cfg = config();
    let mut table = MockTable::from_json(&std::fs::read_to_string(fixture("pipeline_mock.json")).unwrap()).unwrap();
    table.defaults.clear();
    let out = run_pipeline_with(&cfg, &MockScorer::new(table).unwrap()).unwrap();
    assert_eq!(out.failures.get("backend_contract"), Some(&10));
    assert_eq!(out.top.n_unparseable, 10);
    assert_eq!(out.top.accuracy, 0.8);
    assert!(out.predictions[45].contains("\"error\""));
}

#[test]
fn reduced_subset_runs() {
    let mut cfg = config();
    cfg.subset = Some(MaskSubset::second());
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.second.accuracy, 0.8);
}

#[test]
fn edrr_smoke() {
    let cfg = PipelineConfig::from_file(fixture("edrr.json")).unwrap();
    assert_eq!(cfg.mode, Mode::Edrr);
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.evaluated, 4);
    assert_eq!(out.second.accuracy, 1.0);
    let first: serde_json::Value = serde_json::from_str(&out.predictions[0]).unwrap();
    assert_eq!(first["connective"], "but");
}

#[test]
fn config_validation() {
    let mut cfg = config();
    cfg.template.variant = TemplateVariant::ChatStructure;
    assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config(_))));

    let mut cfg = config();
    cfg.template.variant = TemplateVariant::T5Adapt;
    assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config(_))));

    let mut cfg = config();
    cfg.part = "holdout".into();
    assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config(_))));

    let mut cfg = config();
    cfg.corpus.path = fixture("does-not-exist.tsv");
    assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Corpus(_))));

    assert!(PipelineConfig::from_json("{}").is_err());
}
