//! Accuracy, macro-F1 and label-wise F1 under multi-gold annotation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::LabelHierarchy;

/// Column used in the confusion matrix for missing predictions.
pub const NONE_LABEL: &str = "<none>";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold sets")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("instance {0} has no gold label")]
    EmptyGold(usize),
    #[error("unknown level {0:?} (expected top or second)")]
    UnknownLevel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Top,
    Second,
}

impl Level {
    pub fn depth(self) -> usize {
        match self {
            Level::Top => 1,
            Level::Second => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Top => "top",
            Level::Second => "second",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "top" | "1" => Ok(Level::Top),
            "second" | "2" => Ok(Level::Second),
            _ => Err(EvalError::UnknownLevel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Rows are resolved gold labels, columns predicted labels plus [`NONE_LABEL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub columns: Vec<String>,
    pub matrix: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn get(&self, gold: &str, pred: &str) -> usize {
        let r = self.labels.iter().position(|l| l == gold);
        let c = self.columns.iter().position(|l| l == pred);
        match (r, c) {
            (Some(r), Some(c)) => self.matrix[r][c],
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub confusion: Confusion,
    pub n_unparseable: usize,
}

/// Score predictions against gold label sets at one level.
///
/// `None` marks an unparseable or failed prediction; it counts as wrong.
/// A prediction is correct when it equals any gold label; the resolved gold
/// for F1 is the matched label, otherwise the first. Macro-F1 averages over
/// labels that occur as resolved gold or as a prediction.
pub fn evaluate<P, G>(preds: &[Option<P>], golds: &[Vec<G>], level: Level) -> Result<EvalReport, EvalError>
where
    P: AsRef<str>,
    G: AsRef<str>,
{
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut pairs = Vec::with_capacity(preds.len());
    let mut correct = 0;
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        let first = g.first().ok_or(EvalError::EmptyGold(i))?.as_ref();
        let p = p.as_ref().map(AsRef::as_ref);
        let resolved = match p.and_then(|p| g.iter().map(AsRef::as_ref).find(|x| *x == p)) {
            Some(m) => {
                correct += 1;
                m
            }
            None => first,
        };
        pairs.push((resolved, p));
    }

    let labels: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|(g, p)| std::iter::once(*g).chain(*p))
        .collect();
    let labels: Vec<String> = labels.into_iter().map(str::to_string).collect();
    let index = |l: &str| labels.iter().position(|x| x == l).expect("label in universe");
    let mut columns = labels.clone();
    columns.push(NONE_LABEL.to_string());
    let mut matrix = vec![vec![0usize; columns.len()]; labels.len()];
    for (g, p) in &pairs {
        let c = p.map_or(labels.len(), index);
        matrix[index(g)][c] += 1;
    }

    let mut per_label = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        let tp = matrix[i][i];
        let support: usize = matrix[i].iter().sum();
        let predicted: usize = matrix.iter().map(|row| row[i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_label.insert(
            l.clone(),
            LabelMetrics {
                precision,
                recall,
                f1,
                support,
            },
        );
    }
    let macro_f1 = if per_label.is_empty() {
        0.0
    } else {
        per_label.values().map(|m| m.f1).sum::<f64>() / per_label.len() as f64
    };
    let total = preds.len();
    Ok(EvalReport {
        level,
        total,
        correct,
        accuracy: ratio(correct, total),
        macro_f1,
        per_label,
        confusion: Confusion {
            labels,
            columns,
            matrix,
        },
        n_unparseable: preds.iter().filter(|p| p.is_none()).count(),
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelRow {
    pub name: String,
    pub label: String,
    pub f1: f64,
    pub support: usize,
}

/// One row per label in `order`; labels absent from the report get zeros.
pub fn labelwise_rows(report: &EvalReport, order: &[(String, String)]) -> Vec<LabelRow> {
    order
        .iter()
        .map(|(name, label)| {
            let m = report.per_label.get(label);
            LabelRow {
                name: name.clone(),
                label: label.clone(),
                f1: m.map_or(0.0, |m| m.f1),
                support: m.map_or(0, |m| m.support),
            }
        })
        .collect()
}

/// Row names and labels of a level in hierarchy order; second-level rows are
/// named `Top.Second`.
pub fn level_rows(h: &LabelHierarchy, level: Level) -> Vec<(String, String)> {
    let ids = h.level(level.depth()).unwrap_or(&[]);
    ids.iter()
        .map(|&id| {
            let node = h.node(id);
            let name = match node.parent {
                Some(p) => format!("{}.{}", h.node(p).label, node.label),
                None => node.label.clone(),
            };
            (name, node.label.clone())
        })
        .collect()
}

/// Label-wise F1 table in hierarchy order.
pub fn labelwise_report(report: &EvalReport, h: &LabelHierarchy) -> String {
    let rows = labelwise_rows(report, &level_rows(h, report.level));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.name.clone(), format!("{:.2}", r.f1 * 100.0), r.support.to_string()])
        .collect();
    render_table(&["label", "f1", "support"], &body)
}

/// Summary plus per-label metrics as an aligned text table.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = format!(
        "level: {}\naccuracy: {:.4} ({}/{})\nmacro_f1: {:.4}\nunparseable: {}\n\n",
        report.level, report.accuracy, report.correct, report.total, report.macro_f1, report.n_unparseable
    );
    let body: Vec<Vec<String>> = report
        .per_label
        .iter()
        .map(|(l, m)| {
            vec![
                l.clone(),
                format!("{:.4}", m.precision),
                format!("{:.4}", m.recall),
                format!("{:.4}", m.f1),
                m.support.to_string(),
            ]
        })
        .collect();
    out.push_str(&render_table(&["label", "precision", "recall", "f1", "support"], &body));
    out
}

/// Left-aligned first column, right-aligned others.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{:<w$}", c, w = widths[i])
                } else {
                    format!("{:>w$}", c, w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
