use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A mask slot in a prompt and the hierarchy level it predicts.
///
/// The derived ordering (connective, top, second, whole path) matches the
/// order in which the slots appear in the canonical template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRole {
    Connective,
    Top,
    Second,
    WholePath,
}

impl MaskRole {
    pub const LEVELS: [MaskRole; 3] = [MaskRole::Top, MaskRole::Second, MaskRole::Connective];

    /// Hierarchy depth the role verbalizes; `None` for the whole-path slot.
    pub fn depth(self) -> Option<usize> {
        match self {
            MaskRole::Top => Some(1),
            MaskRole::Second => Some(2),
            MaskRole::Connective => Some(3),
            MaskRole::WholePath => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MaskRole::Connective => "connective",
            MaskRole::Top => "top",
            MaskRole::Second => "second",
            MaskRole::WholePath => "whole_path",
        }
    }
}

impl fmt::Display for MaskRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("unknown mask role {0:?}")]
    UnknownRole(String),
    #[error("mask subset must not be empty")]
    EmptySubset,
}

impl FromStr for MaskRole {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "connective" | "conn" => Ok(MaskRole::Connective),
            "top" => Ok(MaskRole::Top),
            "second" => Ok(MaskRole::Second),
            "whole_path" | "path" => Ok(MaskRole::WholePath),
            _ => Err(MaskError::UnknownRole(s.to_string())),
        }
    }
}

/// Non-empty set of mask roles whose factors enter a path score.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<MaskRole>", into = "Vec<MaskRole>")]
pub struct MaskSubset(BTreeSet<MaskRole>);

impl MaskSubset {
    pub fn new(roles: impl IntoIterator<Item = MaskRole>) -> Result<Self, MaskError> {
        let set: BTreeSet<_> = roles.into_iter().collect();
        if set.is_empty() {
            return Err(MaskError::EmptySubset);
        }
        Ok(Self(set))
    }

    /// Top, second and connective: the full joint score.
    pub fn full() -> Self {
        Self(MaskRole::LEVELS.into_iter().collect())
    }

    pub fn top_second() -> Self {
        Self([MaskRole::Top, MaskRole::Second].into_iter().collect())
    }

    pub fn top_connective() -> Self {
        Self([MaskRole::Top, MaskRole::Connective].into_iter().collect())
    }

    pub fn second_connective() -> Self {
        Self([MaskRole::Second, MaskRole::Connective].into_iter().collect())
    }

    pub fn connective() -> Self {
        Self([MaskRole::Connective].into_iter().collect())
    }

    pub fn second() -> Self {
        Self([MaskRole::Second].into_iter().collect())
    }

    pub fn whole_path() -> Self {
        Self([MaskRole::WholePath].into_iter().collect())
    }

    /// The five reduced-path ablations, by name.
    pub fn ablations() -> [(&'static str, MaskSubset); 5] {
        [
            ("top+second", Self::top_second()),
            ("top+connective", Self::top_connective()),
            ("second+connective", Self::second_connective()),
            ("connective", Self::connective()),
            ("second", Self::second()),
        ]
    }

    pub fn contains(&self, role: MaskRole) -> bool {
        self.0.contains(&role)
    }

    pub fn iter(&self) -> impl Iterator<Item = MaskRole> + '_ {
        self.0.iter().copied()
    }
}

impl TryFrom<Vec<MaskRole>> for MaskSubset {
    type Error = MaskError;

    fn try_from(v: Vec<MaskRole>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<MaskSubset> for Vec<MaskRole> {
    fn from(s: MaskSubset) -> Self {
        s.0.into_iter().collect()
    }
}

impl FromStr for MaskSubset {
    type Err = MaskError;

    /// Comma- or plus-separated role names, e.g. `"top,second"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "full" {
            return Ok(Self::full());
        }
        let roles = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(MaskRole::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(roles)
    }
}

impl fmt::Display for MaskSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|r| r.as_str()).collect();
        f.write_str(&names.join(","))
    }
}
