//! Path scoring from per-mask candidate distributions.
//!
//! A path's score is the product of the probabilities its nodes receive at
//! the included mask slots; the predicted path is the argmax (lowest path id
//! on ties), and per-level labels are read off that path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchyError, LabelHierarchy, NodeId, SensePath};
use crate::mask::{MaskRole, MaskSubset};

/// Tolerance on the sum of a mask distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("mask role {0} is missing from the distributions")]
    MissingRole(MaskRole),
    #[error("distribution for {role} has {got} entries, expected {expected}")]
    CandidateCount {
        role: MaskRole,
        got: usize,
        expected: usize,
    },
    #[error("distribution for {role} is invalid: {reason}")]
    InvalidDistribution { role: MaskRole, reason: String },
    #[error("role {role} has no level in a hierarchy of depth {depth}")]
    RoleBeyondDepth { role: MaskRole, depth: usize },
    #[error("no path scores to project")]
    EmptyScores,
    #[error("prior has {got} weights for {expected} nodes")]
    PriorLength { got: usize, expected: usize },
    #[error("unknown gold connective {0:?}")]
    UnknownConnective(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Per-role probability vectors over candidate sets, in hierarchy
/// enumeration order (path order for the whole-path role).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<MaskRole, Vec<f64>>", into = "BTreeMap<MaskRole, Vec<f64>>")]
pub struct MaskDistributions {
    probs: BTreeMap<MaskRole, Vec<f64>>,
}

/// Check that `v` is a probability vector within `tol`.
pub fn check_distribution(v: &[f64], tol: f64) -> Result<(), String> {
    if v.is_empty() {
        return Err("empty vector".into());
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("entry {x} is negative or not finite"));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

impl MaskDistributions {
    pub fn new(probs: BTreeMap<MaskRole, Vec<f64>>) -> Result<Self, ScoringError> {
        for (role, v) in &probs {
            check_distribution(v, DISTRIBUTION_TOLERANCE)
                .map_err(|reason| ScoringError::InvalidDistribution { role: *role, reason })?;
        }
        Ok(Self { probs })
    }

    /// Non-negative weights that need not sum to one. Path scores built from
    /// them are proportional to the normalized ones.
    pub fn from_weights(probs: BTreeMap<MaskRole, Vec<f64>>) -> Result<Self, ScoringError> {
        for (role, v) in &probs {
            if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(ScoringError::InvalidDistribution {
                    role: *role,
                    reason: "weights must be finite and non-negative".into(),
                });
            }
        }
        Ok(Self { probs })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (MaskRole, Vec<f64>)>) -> Result<Self, ScoringError> {
        Self::new(pairs.into_iter().collect())
    }

    /// Uniform distribution over every level role of `h`.
    pub fn uniform(h: &LabelHierarchy) -> Self {
        let probs = MaskRole::LEVELS
            .into_iter()
            .filter_map(|r| {
                let n = h.level(r.depth()?).ok()?.len();
                Some((r, vec![1.0 / n as f64; n]))
            })
            .collect();
        Self { probs }
    }

    /// Point mass on each node of `path`.
    pub fn point_mass(h: &LabelHierarchy, path: &SensePath) -> Self {
        let probs = MaskRole::LEVELS
            .into_iter()
            .filter_map(|r| {
                let d = r.depth()?;
                let n = h.level(d).ok()?.len();
                let mut v = vec![0.0; n];
                v[h.level_index(path.node_at(d)?)] = 1.0;
                Some((r, v))
            })
            .collect();
        Self { probs }
    }

    pub fn get(&self, role: MaskRole) -> Option<&[f64]> {
        self.probs.get(&role).map(Vec::as_slice)
    }

    pub fn roles(&self) -> impl Iterator<Item = MaskRole> + '_ {
        self.probs.keys().copied()
    }

    /// Keep only the listed roles.
    pub fn restrict(&self, roles: &MaskSubset) -> Self {
        Self {
            probs: self
                .probs
                .iter()
                .filter(|(r, _)| roles.contains(**r))
                .map(|(r, v)| (*r, v.clone()))
                .collect(),
        }
    }

    pub fn into_inner(self) -> BTreeMap<MaskRole, Vec<f64>> {
        self.probs
    }
}

impl TryFrom<BTreeMap<MaskRole, Vec<f64>>> for MaskDistributions {
    type Error = ScoringError;

    fn try_from(probs: BTreeMap<MaskRole, Vec<f64>>) -> Result<Self, Self::Error> {
        Self::new(probs)
    }
}

impl From<MaskDistributions> for BTreeMap<MaskRole, Vec<f64>> {
    fn from(d: MaskDistributions) -> Self {
        d.probs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathScore {
    pub path_id: usize,
    /// Product of `factors`.
    pub score: f64,
    pub log_score: f64,
    pub factors: BTreeMap<MaskRole, f64>,
}

/// Index of `path` in the candidate list of `role`.
fn candidate_index(h: &LabelHierarchy, path: &SensePath, role: MaskRole) -> Result<usize, ScoringError> {
    match role.depth() {
        None => Ok(path.id),
        Some(d) => path
            .node_at(d)
            .map(|id| h.level_index(id))
            .ok_or(ScoringError::RoleBeyondDepth {
                role,
                depth: h.depth(),
            }),
    }
}

fn candidate_count(h: &LabelHierarchy, role: MaskRole) -> Result<usize, ScoringError> {
    match role.depth() {
        None => Ok(h.paths().len()),
        Some(d) if d <= h.depth() => Ok(h.level(d)?.len()),
        Some(_) => Err(ScoringError::RoleBeyondDepth {
            role,
            depth: h.depth(),
        }),
    }
}

/// Score every path of `h` using the roles in `subset`.
///
/// Accumulates in log space; `score` is `exp(log_score)`.
pub fn score_paths(d: &MaskDistributions, h: &LabelHierarchy, subset: &MaskSubset) -> Result<Vec<PathScore>, ScoringError> {
    let mut vectors = Vec::new();
    for role in subset.iter() {
        let v = d.get(role).ok_or(ScoringError::MissingRole(role))?;
        let expected = candidate_count(h, role)?;
        if v.len() != expected {
            return Err(ScoringError::CandidateCount {
                role,
                got: v.len(),
                expected,
            });
        }
        vectors.push((role, v));
    }

    h.paths()
        .iter()
        .map(|path| {
            let mut factors = BTreeMap::new();
            let mut log_score = 0.0;
            for &(role, v) in &vectors {
                let p = v[candidate_index(h, path, role)?];
                factors.insert(role, p);
                log_score += p.ln();
            }
            Ok(PathScore {
                path_id: path.id,
                score: log_score.exp(),
                log_score,
                factors,
            })
        })
        .collect()
}

/// Index of the best score, lowest index on ties.
fn argmax(scores: &[PathScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s.log_score > scores[b].log_score) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub path_id: usize,
    /// Canonical labels along the predicted path, top first.
    pub labels: Vec<String>,
    pub score: f64,
    /// Connective text supplied in place of a connective mask.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub given_connective: Option<String>,
    #[serde(skip)]
    pub all_scores: Option<Vec<PathScore>>,
}

impl Prediction {
    /// Label at `depth` (1-based).
    pub fn label(&self, depth: usize) -> Option<&str> {
        depth.checked_sub(1).and_then(|k| self.labels.get(k)).map(String::as_str)
    }

    pub fn top(&self) -> &str {
        &self.labels[0]
    }

    pub fn second(&self) -> &str {
        &self.labels[1]
    }

    pub fn connective(&self) -> Option<&str> {
        self.given_connective
            .as_deref()
            .or_else(|| self.labels.get(2).map(String::as_str))
    }
}

fn prediction_from(h: &LabelHierarchy, scores: Vec<PathScore>, keep: bool) -> Result<Prediction, ScoringError> {
    let best = argmax(&scores).ok_or(ScoringError::EmptyScores)?;
    let s = &scores[best];
    let path = h.path(s.path_id).expect("scores come from this hierarchy");
    let labels = (1..=h.depth())
        .map(|k| h.ancestor_at(path, k).map(|n| n.label.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prediction {
        path_id: s.path_id,
        labels,
        score: s.score,
        given_connective: None,
        all_scores: None,
    }
    .with_scores(keep.then_some(scores)))
}

impl Prediction {
    fn with_scores(mut self, scores: Option<Vec<PathScore>>) -> Self {
        self.all_scores = scores;
        self
    }
}

/// The highest-scoring path and its per-level labels.
pub fn predict(d: &MaskDistributions, h: &LabelHierarchy, subset: &MaskSubset) -> Result<Prediction, ScoringError> {
    prediction_from(h, score_paths(d, h, subset)?, false)
}

/// Like [`predict`] but keeps the full score list.
pub fn predict_with_scores(d: &MaskDistributions, h: &LabelHierarchy, subset: &MaskSubset) -> Result<Prediction, ScoringError> {
    prediction_from(h, score_paths(d, h, subset)?, true)
}

/// Prediction for an explicit relation whose connective slot holds the gold
/// connective: only the top and second-level masks are scored.
pub fn predict_edrr(d_partial: &MaskDistributions, gold_connective: &str, h: &LabelHierarchy) -> Result<Prediction, ScoringError> {
    let connective = gold_connective.trim();
    if connective.is_empty() {
        return Err(ScoringError::UnknownConnective(gold_connective.to_string()));
    }
    let mut p = predict(d_partial, h, &MaskSubset::top_second())?;
    p.given_connective = Some(connective.to_string());
    Ok(p)
}

/// How path scores are pooled into a node weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelProjection {
    pub depth: usize,
    pub node: NodeId,
    pub label: String,
    pub weight: f64,
    /// `(label, weight)` for every node at `depth`, in enumeration order.
    pub weights: Vec<(String, f64)>,
}

/// Per-node weight at `depth`: `prior[node] * pool(score of paths through node)`.
/// `prior` is indexed like the level's candidate list and defaults to 1.0.
pub fn project_level(
    scores: &[PathScore],
    h: &LabelHierarchy,
    depth: usize,
    prior: Option<&[f64]>,
    aggregation: Aggregation,
) -> Result<LevelProjection, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyScores);
    }
    let level = h.level(depth)?;
    if let Some(p) = prior {
        if p.len() != level.len() {
            return Err(ScoringError::PriorLength {
                got: p.len(),
                expected: level.len(),
            });
        }
    }
    // Max pooling and the argmax run in log space, like `predict`, so the
    // leaf-level projection always agrees with the predicted path.
    let mut pooled = vec![f64::NEG_INFINITY; level.len()];
    let mut sums = vec![0.0f64; level.len()];
    for s in scores {
        let path = h.path(s.path_id).expect("scores come from this hierarchy");
        let node = path.node_at(depth).expect("depth within hierarchy");
        let i = h.level_index(node);
        pooled[i] = pooled[i].max(s.log_score);
        sums[i] += s.score;
    }
    let log_weights: Vec<f64> = (0..level.len())
        .map(|i| {
            let pooled = match aggregation {
                Aggregation::Max => pooled[i],
                Aggregation::Sum => sums[i].ln(),
            };
            prior.map_or(0.0, |p| p[i].ln()) + pooled
        })
        .collect();
    let mut best = 0;
    for (i, w) in log_weights.iter().enumerate() {
        if *w > log_weights[best] {
            best = i;
        }
    }
    let weights: Vec<f64> = (0..level.len())
        .map(|i| {
            let pooled = match aggregation {
                Aggregation::Max => pooled[i].exp(),
                Aggregation::Sum => sums[i],
            };
            prior.map_or(1.0, |p| p[i]) * pooled
        })
        .collect();
    let node = level[best];
    Ok(LevelProjection {
        depth,
        node,
        label: h.node(node).label.clone(),
        weight: weights[best],
        weights: level
            .iter()
            .zip(&weights)
            .map(|(&id, &w)| (h.node(id).label.clone(), w))
            .collect(),
    })
}

/// Which reading of the per-instance training objective to evaluate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    /// `-sum_k log Pr(z_k = gold_k)`, the negative log of the joint score.
    #[default]
    SumOfLogs,
    /// `-log sum_k Pr(z_k = gold_k)`.
    LogOfSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Loss {
    pub value: f64,
}

impl Loss {
    /// A gold factor had zero probability; `value` is +inf.
    pub fn is_degenerate(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Per-instance negative log-likelihood of the gold path over every level
/// role of the hierarchy.
pub fn objective_value(d: &MaskDistributions, h: &LabelHierarchy, gold: &SensePath, form: ObjectiveForm) -> Result<Loss, ScoringError> {
    let mut factors = Vec::new();
    for role in MaskRole::LEVELS {
        let depth = role.depth().expect("level role");
        if depth > h.depth() {
            continue;
        }
        let v = d.get(role).ok_or(ScoringError::MissingRole(role))?;
        let expected = candidate_count(h, role)?;
        if v.len() != expected {
            return Err(ScoringError::CandidateCount {
                role,
                got: v.len(),
                expected,
            });
        }
        factors.push(v[candidate_index(h, gold, role)?]);
    }
    let value = match form {
        ObjectiveForm::SumOfLogs => factors.iter().map(|p| -p.ln()).sum(),
        ObjectiveForm::LogOfSum => -factors.iter().sum::<f64>().ln(),
    };
    // -0.0 from -ln(1.0)
    Ok(Loss { value: value + 0.0 })
}

/// Pr(path) normalized over all paths; useful when the raw joint scores do
/// not sum to one (e.g. reduced subsets).
pub fn normalized(scores: &[PathScore]) -> Vec<f64> {
    let total: f64 = scores.iter().map(|s| s.score).sum();
    if total > 0.0 {
        scores.iter().map(|s| s.score / total).collect()
    } else {
        vec![0.0; scores.len()]
    }
}
