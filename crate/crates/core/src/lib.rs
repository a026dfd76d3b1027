//! Hierarchy-path prediction for implicit discourse relation recognition.
//!
//! A label hierarchy (top sense, second-level sense, connective) is turned
//! into a cloze prompt with one mask per level. A backend supplies candidate
//! distributions for each mask; every root-to-leaf path is scored as the
//! product of its per-mask probabilities and the best path is projected back
//! to per-level predictions for evaluation.

pub mod backends;
pub mod corpus;
pub mod eval;
pub mod hierarchy;
pub mod mask;
pub mod pipeline;
pub mod prior;
pub mod prompting;
pub mod scoring;

pub use backends::{batch_score, BackendError, MaskScorer, MockScorer, MockTable, RemoteConfig, RemoteScorer, ScoreRequest, ScoreResponse};
pub use corpus::{apply_split, GoldSense, Instance, RelationType, SplitSpec};
pub use eval::{evaluate, labelwise_report, EvalReport, Level};
pub use hierarchy::{LabelHierarchy, LabelNode, NodeId, SensePath};
pub use mask::{MaskRole, MaskSubset};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
pub use prior::{ExplicitRecord, PriorMatrix};
pub use prompting::{chat_prompt, parse_path, render, ChatKind, PromptTemplate, RenderedPrompt, TemplateVariant};
pub use scoring::{objective_value, predict, project_level, score_paths, MaskDistributions, PathScore, Prediction};
