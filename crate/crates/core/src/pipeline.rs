//! End-to-end runs: ingest, split, render, score, predict, evaluate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backends::{batch_score, BackendError, MaskScorer, MockScorer, MockTable, RemoteConfig, RemoteScorer, ScoreRequest};
use crate::corpus::{apply_split, ingest, CorpusError, CorpusFormat, Instance, SplitReport, SplitSpec};
use crate::eval::{evaluate, EvalError, EvalReport, Level};
use crate::hierarchy::{HierarchyError, LabelHierarchy, BUILTIN_HIERARCHIES};
use crate::mask::{MaskRole, MaskSubset};
use crate::prompting::{render, PromptTemplate, TemplateVariant, DEFAULT_SOFT_TOKENS};
use crate::scoring::{predict, predict_edrr, Prediction};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("backend setup failed: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Implicit relations; every template mask is scored.
    #[default]
    Idrr,
    /// Explicit relations; the gold connective fills the connective slot.
    Edrr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub path: PathBuf,
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    #[serde(default = "default_variant")]
    pub variant: TemplateVariant,
    #[serde(default = "default_soft_tokens")]
    pub soft_tokens: usize,
}

fn default_variant() -> TemplateVariant {
    TemplateVariant::Discoprompt
}

fn default_soft_tokens() -> usize {
    DEFAULT_SOFT_TOKENS
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            soft_tokens: default_soft_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock { table: PathBuf },
    Remote(RemoteConfig),
}

fn default_part() -> String {
    "test".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Built-in hierarchy name or path to a hierarchy JSON file.
    pub hierarchy: String,
    pub corpus: CorpusConfig,
    pub split: String,
    /// Split partition to evaluate: train, dev or test.
    #[serde(default = "default_part")]
    pub part: String,
    #[serde(default)]
    pub template: TemplateConfig,
    /// Defaults to every mask role in the template.
    #[serde(default)]
    pub subset: Option<MaskSubset>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub mode: Mode,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        self.corpus.path = join(&self.corpus.path);
        if let BackendConfig::Mock { table } = &mut self.backend {
            *table = join(table);
        }
        if !BUILTIN_HIERARCHIES.contains(&self.hierarchy.as_str()) {
            self.hierarchy = join(Path::new(&self.hierarchy)).display().to_string();
        }
    }

    pub fn template(&self) -> PromptTemplate {
        PromptTemplate::new(self.template.variant, self.template.soft_tokens)
    }

    /// Mask subset used for scoring, checked against the template.
    pub fn effective_subset(&self) -> Result<MaskSubset, PipelineError> {
        let t = self.template();
        if t.variant.chat_kind().is_some() {
            return Err(PipelineError::Config(format!(
                "chat variant {} produces free text and cannot be scored by mask",
                t.variant
            )));
        }
        t.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.mode == Mode::Edrr {
            if !t.mask_roles().contains(&MaskRole::Connective) {
                return Err(PipelineError::Config(format!(
                    "variant {} has no connective slot to fill",
                    t.variant
                )));
            }
            if self.subset.as_ref().is_some_and(|s| *s != MaskSubset::top_second()) {
                return Err(PipelineError::Config("edrr mode scores exactly top,second".into()));
            }
            return Ok(MaskSubset::top_second());
        }
        let roles = t.mask_roles();
        let subset = match &self.subset {
            Some(s) => s.clone(),
            None => MaskSubset::new(roles.iter().copied()).map_err(|e| PipelineError::Config(e.to_string()))?,
        };
        if let Some(r) = subset.iter().find(|r| !roles.contains(r)) {
            return Err(PipelineError::Config(format!(
                "subset role {r} has no mask in variant {}",
                t.variant
            )));
        }
        Ok(subset)
    }

    pub fn build_backend(&self) -> Result<Box<dyn MaskScorer>, PipelineError> {
        Ok(match &self.backend {
            BackendConfig::Mock { table } => {
                let text = std::fs::read_to_string(table).map_err(|source| PipelineError::Io {
                    path: table.display().to_string(),
                    source,
                })?;
                Box::new(MockScorer::new(MockTable::from_json(&text)?)?)
            }
            BackendConfig::Remote(rc) => Box::new(RemoteScorer::new(rc.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub split: SplitReport,
    pub evaluated: usize,
    pub top: EvalReport,
    pub second: EvalReport,
    /// Failed instances by error kind.
    pub failures: BTreeMap<String, usize>,
    /// One JSON object per evaluated instance, in input order.
    #[serde(skip)]
    pub predictions: Vec<String>,
}

impl PipelineOutput {
    pub fn predictions_jsonl(&self) -> String {
        let mut s = self.predictions.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let backend = config.build_backend()?;
    run_pipeline_with(config, backend.as_ref())
}

/// Runs with a caller-supplied backend; `config.backend` is ignored.
pub fn run_pipeline_with(config: &PipelineConfig, backend: &dyn MaskScorer) -> Result<PipelineOutput, PipelineError> {
    let subset = config.effective_subset()?;
    let template = config.template();
    let h = LabelHierarchy::load(&config.hierarchy)?;
    let ingested = ingest(&config.corpus.path, config.corpus.format, &h)?;
    let pool = match config.mode {
        Mode::Idrr => &ingested.implicit,
        Mode::Edrr => &ingested.explicit,
    };
    let split = apply_split(pool, &SplitSpec::by_name(&config.split)?)?;
    let instances: &[Instance] = split
        .part(&config.part)
        .ok_or_else(|| PipelineError::Config(format!("unknown split part {:?}", config.part)))?;

    let mut outcomes: Vec<Result<Prediction, (String, String)>> = Vec::with_capacity(instances.len());
    let mut requests = Vec::new();
    let mut slots = Vec::new();
    for inst in instances {
        let t = match (config.mode, inst.connective.as_deref()) {
            (Mode::Edrr, Some(c)) => template.with_connective(c),
            (Mode::Edrr, None) => {
                outcomes.push(Err(("data".into(), "explicit relation without connective".into())));
                continue;
            }
            (Mode::Idrr, _) => template.clone(),
        };
        match render(&t, inst, &h) {
            Ok(r) => {
                slots.push(outcomes.len());
                outcomes.push(Err(("pending".into(), String::new())));
                requests.push(ScoreRequest::from_rendered(Some(inst.id.clone()), &r));
            }
            Err(e) => outcomes.push(Err(("prompt".into(), e.to_string()))),
        }
    }

    let batch = batch_score(backend, &requests);
    for (slot, result) in slots.into_iter().zip(batch.results) {
        let inst = &instances[slot];
        outcomes[slot] = match result {
            Err(e) => Err((format!("backend_{}", e.kind().as_str()), e.to_string())),
            Ok(resp) => {
                let d = resp.into_distributions();
                let p = match config.mode {
                    Mode::Idrr => predict(&d, &h, &subset),
                    Mode::Edrr => predict_edrr(&d, inst.connective.as_deref().unwrap_or_default(), &h),
                };
                p.map_err(|e| ("scoring".into(), e.to_string()))
            }
        };
    }

    let mut failures = BTreeMap::new();
    let mut predictions = Vec::with_capacity(instances.len());
    let mut top_preds = Vec::with_capacity(instances.len());
    let mut second_preds = Vec::with_capacity(instances.len());
    for (inst, outcome) in instances.iter().zip(&outcomes) {
        let line = match outcome {
            Ok(p) => {
                top_preds.push(Some(p.top().to_string()));
                second_preds.push(Some(p.second().to_string()));
                let path = h.path(p.path_id).map(|sp| h.path_string(sp));
                json!({
                    "id": inst.id,
                    "path": path,
                    "top": p.top(),
                    "second": p.second(),
                    "connective": p.connective(),
                    "score": p.score,
                })
            }
            Err((kind, message)) => {
                *failures.entry(kind.clone()).or_insert(0) += 1;
                top_preds.push(None);
                second_preds.push(None);
                json!({"id": inst.id, "error": {"kind": kind, "message": message}})
            }
        };
        predictions.push(line.to_string());
    }

    let gold_top: Vec<Vec<&str>> = instances.iter().map(|i| i.gold_labels(1)).collect();
    let gold_second: Vec<Vec<&str>> = instances.iter().map(|i| i.gold_labels(2)).collect();
    Ok(PipelineOutput {
        split: split.report(),
        evaluated: instances.len(),
        top: evaluate(&top_preds, &gold_top, Level::Top)?,
        second: evaluate(&second_preds, &gold_second, Level::Second)?,
        failures,
        predictions,
    })
}
