//! Discourse relation ingestion (CoNLL-2016 JSON lines, normalized TSV) and
//! section-based train/dev/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::LabelHierarchy;
use crate::prior::{normalize_connective, ExplicitRecord};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("instance {id:?} has no section but split {split:?} is section-based")]
    MissingSection { id: String, split: String },
    #[error("split {0:?} has overlapping partitions")]
    OverlappingSplit(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("unknown corpus format {0:?}")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationType {
    Implicit,
    Explicit,
}

/// A gold annotation resolved to canonical hierarchy labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldSense {
    pub top: String,
    pub second: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub arg1: String,
    pub arg2: String,
    /// Never empty; every entry resolves in the hierarchy used at ingest.
    pub gold_senses: Vec<GoldSense>,
    pub relation_type: RelationType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<u32>,
}

impl Instance {
    /// Bare implicit instance, mostly for prompts and tests.
    pub fn implicit(id: impl Into<String>, arg1: impl Into<String>, arg2: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            arg1: arg1.into(),
            arg2: arg2.into(),
            gold_senses: Vec::new(),
            relation_type: RelationType::Implicit,
            connective: None,
            section: None,
        }
    }

    pub fn gold_labels(&self, depth: usize) -> Vec<&str> {
        self.gold_senses
            .iter()
            .map(|g| if depth == 1 { g.top.as_str() } else { g.second.as_str() })
            .collect()
    }
}

/// A line- or row-level problem that did not stop ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub implicit: Vec<Instance>,
    pub explicit: Vec<Instance>,
    pub errors: Vec<LineError>,
    /// Sense strings that did not resolve, with occurrence counts.
    pub dropped_senses: BTreeMap<String, usize>,
    /// Relations whose every sense was dropped.
    pub without_gold: usize,
    /// Relation types other than implicit/explicit (EntRel, AltLex, ...).
    pub skipped_types: BTreeMap<String, usize>,
}

impl Ingested {
    /// One `(connective, second-level sense)` record per explicit gold sense.
    pub fn explicit_records(&self) -> Vec<ExplicitRecord> {
        self.explicit
            .iter()
            .filter_map(|inst| inst.connective.as_ref().map(|c| (c, inst)))
            .flat_map(|(c, inst)| {
                inst.gold_senses
                    .iter()
                    .map(move |g| ExplicitRecord::new(c.clone(), g.second.clone()))
            })
            .collect()
    }

    /// Instances of one relation type.
    pub fn of_type(&self, kind: RelationType) -> &[Instance] {
        match kind {
            RelationType::Implicit => &self.implicit,
            RelationType::Explicit => &self.explicit,
        }
    }

    fn resolve_senses<'a>(
        &mut self,
        h: &LabelHierarchy,
        senses: impl IntoIterator<Item = &'a str>,
    ) -> Vec<GoldSense> {
        let mut out: Vec<GoldSense> = Vec::new();
        for sense in senses {
            match h.resolve_sense(sense) {
                Some(node) => {
                    let second = h.node(node);
                    let top = h.node(second.parent.expect("second-level nodes have parents"));
                    let gold = GoldSense {
                        top: top.label.clone(),
                        second: second.label.clone(),
                    };
                    if !out.contains(&gold) {
                        out.push(gold);
                    }
                }
                None => *self.dropped_senses.entry(sense.to_string()).or_default() += 1,
            }
        }
        out
    }

    fn push(&mut self, inst: Instance) {
        if inst.gold_senses.is_empty() {
            self.without_gold += 1;
            return;
        }
        match inst.relation_type {
            RelationType::Implicit => self.implicit.push(inst),
            RelationType::Explicit => self.explicit.push(inst),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ConllSpan {
    #[serde(rename = "RawText", default)]
    raw_text: String,
}

#[derive(Debug, Deserialize)]
struct ConllRelation {
    #[serde(rename = "Arg1")]
    arg1: ConllSpan,
    #[serde(rename = "Arg2")]
    arg2: ConllSpan,
    #[serde(rename = "Connective", default)]
    connective: Option<ConllSpan>,
    #[serde(rename = "Sense")]
    sense: Vec<String>,
    #[serde(rename = "Type")]
    kind: String,
    #[serde(rename = "DocID", default)]
    doc_id: Option<String>,
    #[serde(rename = "ID", default)]
    id: Option<serde_json::Value>,
}

/// WSJ section from a document id such as `wsj_2100` (section 21).
pub fn section_from_doc_id(doc_id: &str) -> Option<u32> {
    let digits = doc_id.strip_prefix("wsj_")?;
    if digits.len() < 4 || !digits.bytes().take(4).all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits[..2].parse().ok()
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Ingest a CoNLL-2016 relations file (one JSON object per line).
pub fn ingest_conll(path: impl AsRef<Path>, h: &LabelHierarchy) -> Result<Ingested, CorpusError> {
    let path = path.as_ref();
    ingest_conll_reader(open(path)?, h).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn ingest_conll_reader<R: BufRead>(reader: R, h: &LabelHierarchy) -> std::io::Result<Ingested> {
    let mut out = Ingested::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rel: ConllRelation = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(LineError {
                    line: lineno,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let relation_type = match rel.kind.as_str() {
            "Implicit" => RelationType::Implicit,
            "Explicit" => RelationType::Explicit,
            other => {
                *out.skipped_types.entry(other.to_string()).or_default() += 1;
                continue;
            }
        };
        let connective = rel
            .connective
            .map(|c| normalize_connective(&c.raw_text))
            .filter(|c| !c.is_empty());
        if relation_type == RelationType::Explicit && connective.is_none() {
            out.errors.push(LineError {
                line: lineno,
                message: "explicit relation without connective text".into(),
            });
            continue;
        }
        let id = match (&rel.doc_id, &rel.id) {
            (Some(doc), Some(id)) => format!("{doc}-{}", json_scalar(id)),
            (None, Some(id)) => json_scalar(id),
            (Some(doc), None) => format!("{doc}-line{lineno}"),
            (None, None) => format!("line{lineno}"),
        };
        let gold_senses = out.resolve_senses(h, rel.sense.iter().map(String::as_str));
        out.push(Instance {
            id,
            arg1: rel.arg1.raw_text,
            arg2: rel.arg2.raw_text,
            gold_senses,
            relation_type,
            connective,
            section: rel.doc_id.as_deref().and_then(section_from_doc_id),
        });
    }
    Ok(out)
}

fn json_scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Ingest the normalized TSV carrier:
/// `id, section, type, connective, senses, arg1, arg2`, with senses joined
/// by `;` in `Top.Second` form.
pub fn ingest_tsv(path: impl AsRef<Path>, h: &LabelHierarchy) -> Result<Ingested, CorpusError> {
    let path = path.as_ref();
    ingest_tsv_reader(open(path)?, h).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn ingest_tsv_reader<R: BufRead>(reader: R, h: &LabelHierarchy) -> std::io::Result<Ingested> {
    let mut out = Ingested::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if lineno == 1 && fields.first() == Some(&"id") {
            continue;
        }
        match parse_tsv_row(&fields) {
            Ok(row) => {
                let gold_senses = out.resolve_senses(h, row.senses.iter().copied());
                out.push(Instance {
                    id: row.id,
                    arg1: row.arg1,
                    arg2: row.arg2,
                    gold_senses,
                    relation_type: row.relation_type,
                    connective: row.connective,
                    section: row.section,
                });
            }
            Err(message) => out.errors.push(LineError { line: lineno, message }),
        }
    }
    Ok(out)
}

struct TsvRow<'a> {
    id: String,
    section: Option<u32>,
    relation_type: RelationType,
    connective: Option<String>,
    senses: Vec<&'a str>,
    arg1: String,
    arg2: String,
}

fn parse_tsv_row<'a>(fields: &[&'a str]) -> Result<TsvRow<'a>, String> {
    let [id, section, kind, connective, senses, arg1, arg2] = fields else {
        return Err(format!("expected 7 tab-separated columns, got {}", fields.len()));
    };
    if id.trim().is_empty() {
        return Err("empty id".into());
    }
    let section = match section.trim() {
        "" => None,
        s => Some(s.parse::<u32>().map_err(|_| format!("bad section {s:?}"))?),
    };
    let relation_type = match kind.trim().to_ascii_lowercase().as_str() {
        "implicit" => RelationType::Implicit,
        "explicit" => RelationType::Explicit,
        other => return Err(format!("unknown relation type {other:?}")),
    };
    let senses: Vec<&str> = senses
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if senses.is_empty() {
        return Err("empty senses column".into());
    }
    if let Some(bad) = senses
        .iter()
        .find(|s| s.split('.').any(|p| p.trim().is_empty()))
    {
        return Err(format!("unparseable sense {bad:?}"));
    }
    let connective = Some(normalize_connective(connective)).filter(|c| !c.is_empty());
    Ok(TsvRow {
        id: id.trim().to_string(),
        section,
        relation_type,
        connective,
        senses,
        arg1: arg1.to_string(),
        arg2: arg2.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Conll,
    Tsv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conll" | "jsonl" => Ok(Self::Conll),
            "tsv" => Ok(Self::Tsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn ingest(path: impl AsRef<Path>, format: CorpusFormat, h: &LabelHierarchy) -> Result<Ingested, CorpusError> {
    match format {
        CorpusFormat::Conll => ingest_conll(path, h),
        CorpusFormat::Tsv => ingest_tsv(path, h),
    }
}

/// Which instances fall into one side of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Sections(BTreeSet<u32>),
    Ids(BTreeSet<String>),
    /// Instances without a WSJ section (e.g. a non-WSJ blind test set).
    Unsectioned,
}

impl Partition {
    fn sections(range: impl IntoIterator<Item = u32>) -> Self {
        Partition::Sections(range.into_iter().collect())
    }

    fn matches(&self, inst: &Instance) -> bool {
        match self {
            Partition::Sections(s) => inst.section.is_some_and(|x| s.contains(&x)),
            Partition::Ids(ids) => ids.contains(&inst.id),
            Partition::Unsectioned => inst.section.is_none(),
        }
    }

    fn overlaps(&self, other: &Partition) -> bool {
        match (self, other) {
            (Partition::Sections(a), Partition::Sections(b)) => !a.is_disjoint(b),
            (Partition::Ids(a), Partition::Ids(b)) => !a.is_disjoint(b),
            (Partition::Unsectioned, Partition::Unsectioned) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub train: Partition,
    pub dev: Partition,
    pub test: Partition,
}

impl SplitSpec {
    /// Sections 2-20 / 0-1 / 21-22.
    pub fn ji() -> Self {
        Self {
            name: "ji".into(),
            train: Partition::sections(2..=20),
            dev: Partition::sections(0..=1),
            test: Partition::sections(21..=22),
        }
    }

    /// Sections 2-21 / 22 / 23.
    pub fn lin() -> Self {
        Self {
            name: "lin".into(),
            train: Partition::sections(2..=21),
            dev: Partition::sections([22]),
            test: Partition::sections([23]),
        }
    }

    /// CoNLL-2016 official WSJ partition: 2-21 / 22 / 23.
    pub fn conll_test() -> Self {
        Self {
            name: "conll_test".into(),
            ..Self::lin()
        }
    }

    /// CoNLL-2016 blind evaluation: WSJ 2-21 / 22, test is the unsectioned set.
    pub fn conll_blind() -> Self {
        Self {
            name: "conll_blind".into(),
            train: Partition::sections(2..=21),
            dev: Partition::sections([22]),
            test: Partition::Unsectioned,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, CorpusError> {
        match name {
            "ji" => Ok(Self::ji()),
            "lin" => Ok(Self::lin()),
            "conll_test" => Ok(Self::conll_test()),
            "conll_blind" => Ok(Self::conll_blind()),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [&self.train, &self.dev, &self.test];
        for (i, a) in parts.iter().enumerate() {
            for b in &parts[i + 1..] {
                if a.overlaps(b) {
                    return Err(CorpusError::OverlappingSplit(self.name.clone()));
                }
            }
        }
        Ok(())
    }

    fn section_based(&self) -> bool {
        [&self.train, &self.dev, &self.test]
            .iter()
            .all(|p| matches!(p, Partition::Sections(_)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
    pub unassigned: Vec<Instance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unassigned: usize,
}

impl Split {
    pub fn report(&self) -> SplitReport {
        SplitReport {
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
            unassigned: self.unassigned.len(),
        }
    }

    pub fn part(&self, name: &str) -> Option<&[Instance]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Route every instance into train, dev, test or unassigned, preserving order.
pub fn apply_split(instances: &[Instance], spec: &SplitSpec) -> Result<Split, CorpusError> {
    spec.validate()?;
    let section_based = spec.section_based();
    let mut split = Split::default();
    for inst in instances {
        if section_based && inst.section.is_none() {
            return Err(CorpusError::MissingSection {
                id: inst.id.clone(),
                split: spec.name.clone(),
            });
        }
        let bucket = if spec.train.matches(inst) {
            &mut split.train
        } else if spec.dev.matches(inst) {
            &mut split.dev
        } else if spec.test.matches(inst) {
            &mut split.test
        } else {
            &mut split.unassigned
        };
        bucket.push(inst.clone());
    }
    Ok(split)
}
