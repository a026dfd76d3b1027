//! Connective priors: Pr(second-level sense | connective) estimated from
//! explicit relations, and per-sense connective rankings.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::LabelHierarchy;

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("conditional is undefined for unobserved connective {0:?} with alpha = 0")]
    UndefinedConditional(String),
    #[error("prior matrix is inconsistent: {0}")]
    Inconsistent(String),
}

/// An explicit relation reduced to its connective and second-level sense.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitRecord {
    pub connective: String,
    pub sense: String,
}

impl ExplicitRecord {
    pub fn new(connective: impl Into<String>, sense: impl Into<String>) -> Self {
        Self {
            connective: connective.into(),
            sense: sense.into(),
        }
    }
}

/// A record that could not be counted.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordReject {
    /// Zero-based position in the input stream (line number for TSV input).
    pub index: usize,
    pub reason: String,
}

/// Lowercase, collapse internal whitespace, strip punctuation at both ends.
pub fn normalize_connective(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// Connective x second-level sense co-occurrence counts.
///
/// Connectives are kept sorted so the matrix does not depend on the order
/// in which records arrive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorMatrix {
    pub connectives: Vec<String>,
    pub senses: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub alpha: f64,
}

/// Result of [`PriorMatrix::accumulate`].
#[derive(Debug, Clone)]
pub struct Accumulated {
    pub matrix: PriorMatrix,
    pub rejects: Vec<RecordReject>,
}

impl PriorMatrix {
    /// Empty matrix over the hierarchy's second-level labels.
    pub fn empty(h: &LabelHierarchy, alpha: f64) -> Self {
        let senses = h
            .labels_at(2)
            .expect("hierarchies have a second level")
            .into_iter()
            .map(String::from)
            .collect();
        Self {
            connectives: Vec::new(),
            senses,
            counts: Vec::new(),
            alpha,
        }
    }

    /// Count `(connective, sense)` pairs. Records whose sense does not
    /// resolve to a second-level node are rejected and tallied; counting
    /// continues.
    pub fn accumulate<I>(h: &LabelHierarchy, records: I, alpha: f64) -> Accumulated
    where
        I: IntoIterator<Item = ExplicitRecord>,
    {
        let mut matrix = Self::empty(h, alpha);
        let mut tally: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        let mut rejects = Vec::new();
        let width = matrix.senses.len();
        for (index, rec) in records.into_iter().enumerate() {
            let connective = normalize_connective(&rec.connective);
            if connective.is_empty() {
                rejects.push(RecordReject {
                    index,
                    reason: "empty connective".into(),
                });
                continue;
            }
            let Some(node) = h.resolve_sense(&rec.sense) else {
                rejects.push(RecordReject {
                    index,
                    reason: format!("unknown sense {:?}", rec.sense),
                });
                continue;
            };
            let col = h.level_index(node);
            tally.entry(connective).or_insert_with(|| vec![0; width])[col] += 1;
        }
        for (conn, row) in tally {
            matrix.connectives.push(conn);
            matrix.counts.push(row);
        }
        Accumulated { matrix, rejects }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if self.counts.len() != self.connectives.len() {
            return Err(PriorError::Inconsistent(format!(
                "{} rows for {} connectives",
                self.counts.len(),
                self.connectives.len()
            )));
        }
        if let Some(row) = self.counts.iter().find(|r| r.len() != self.senses.len()) {
            return Err(PriorError::Inconsistent(format!(
                "row of width {} for {} senses",
                row.len(),
                self.senses.len()
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(PriorError::Inconsistent(format!("alpha {}", self.alpha)));
        }
        Ok(())
    }

    pub fn row(&self, connective: &str) -> Option<&[u64]> {
        let z = normalize_connective(connective);
        self.connectives
            .binary_search(&z)
            .ok()
            .map(|i| self.counts[i].as_slice())
    }

    pub fn count(&self, connective: &str, sense: &str) -> u64 {
        let col = self.senses.iter().position(|s| s == sense);
        match (self.row(connective), col) {
            (Some(row), Some(c)) => row[c],
            _ => 0,
        }
    }

    /// Pr(sense | z) over `self.senses`, with add-alpha smoothing.
    pub fn conditional(&self, connective: &str) -> Result<Vec<f64>, PriorError> {
        let n = self.senses.len();
        let zeros = vec![0u64; n];
        let row = self.row(connective).unwrap_or(&zeros);
        let total: u64 = row.iter().sum();
        let denom = total as f64 + self.alpha * n as f64;
        if denom <= 0.0 {
            return Err(PriorError::UndefinedConditional(normalize_connective(
                connective,
            )));
        }
        Ok(row
            .iter()
            .map(|&c| (c as f64 + self.alpha) / denom)
            .collect())
    }

    /// For every sense, connectives by Pr(sense|z) descending, ties broken
    /// lexicographically. Only connectives with a defined conditional are ranked.
    pub fn rank_connectives(&self) -> ConnectiveRanking {
        let conditionals: Vec<(&str, Vec<f64>)> = self
            .connectives
            .iter()
            .filter_map(|z| self.conditional(z).ok().map(|p| (z.as_str(), p)))
            .collect();
        let per_sense = self
            .senses
            .iter()
            .enumerate()
            .map(|(col, sense)| {
                let mut ranked: Vec<(String, f64)> = conditionals
                    .iter()
                    .map(|(z, p)| (z.to_string(), p[col]))
                    .collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                SenseRanking {
                    sense: sense.clone(),
                    connectives: ranked,
                }
            })
            .collect();
        ConnectiveRanking { per_sense }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PriorError> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| PriorError::Inconsistent(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseRanking {
    pub sense: String,
    pub connectives: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectiveRanking {
    pub per_sense: Vec<SenseRanking>,
}

impl ConnectiveRanking {
    /// Suggested connective for `sense`: the top-ranked entry.
    pub fn top1(&self, sense: &str) -> Option<&str> {
        self.per_sense
            .iter()
            .find(|r| r.sense == sense)
            .and_then(|r| r.connectives.first())
            .map(|(z, _)| z.as_str())
    }
}

/// Read `connective<TAB>sense` lines. Blank lines and lines starting with
/// `#` are skipped; lines without exactly two fields are returned as rejects.
pub fn read_explicit_tsv<R: BufRead>(
    reader: R,
) -> std::io::Result<(Vec<ExplicitRecord>, Vec<RecordReject>)> {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        match fields.as_slice() {
            [conn, sense] => records.push(ExplicitRecord::new(*conn, sense.trim())),
            _ => rejects.push(RecordReject {
                index: lineno + 1,
                reason: format!("expected 2 tab-separated fields, got {}", fields.len()),
            }),
        }
    }
    Ok((records, rejects))
}
