//! The discourse-sense label hierarchy and its root-to-leaf path space.
//!
//! A hierarchy is loaded from a JSON config document listing every node with
//! its depth and parent label. Nodes are enumerated depth-first with children
//! in config order, so path ids are stable across runs. Two configs ship with
//! the crate: `pdtb2` (4 top-level relations, 11 subtypes, 11 connectives) and
//! `conll16` (4 top-level relations, 14 subtypes, 14 connectives).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator used between labels in the textual form of a path.
pub const PATH_SEPARATOR: &str = " -> ";

const PDTB2_CONFIG: &str = include_str!("../configs/pdtb2.json");
const CONLL16_CONFIG: &str = include_str!("../configs/conll16.json");

/// Names of the hierarchy configs embedded in the crate.
pub const BUILTIN_HIERARCHIES: [&str; 2] = ["pdtb2", "conll16"];

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("duplicate label {label:?} at depth {depth}")]
    DuplicateLabel { label: String, depth: usize },
    #[error("node {label:?} references unknown parent {parent:?}")]
    Orphan { label: String, parent: String },
    #[error("cycle in parent links through node {label:?}")]
    Cycle { label: String },
    #[error("level {depth} has no nodes")]
    EmptyLevel { depth: usize },
    #[error("node {label:?} has depth {depth}, outside 1..={max}")]
    DepthOutOfRange { label: String, depth: usize, max: usize },
    #[error("node {label:?} at depth {depth} has parent {parent:?} at depth {parent_depth}")]
    ParentDepthMismatch {
        label: String,
        depth: usize,
        parent: String,
        parent_depth: usize,
    },
    #[error("top-level node {label:?} must not declare a parent")]
    TopLevelWithParent { label: String },
    #[error("node {label:?} at depth {depth} has no children")]
    Childless { label: String, depth: usize },
    #[error("node {label:?} has an empty surface")]
    EmptySurface { label: String },
    #[error("node label {label:?} is empty or contains the path separator \"->\"")]
    InvalidLabel { label: String },
    #[error("hierarchy depth must be at least 2, got {0}")]
    TooShallow(usize),
    #[error("unknown built-in hierarchy {0:?}")]
    UnknownBuiltin(String),
    #[error("depth {depth} is outside 1..={max}")]
    LevelOutOfRange { depth: usize, max: usize },
    #[error("malformed hierarchy config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read hierarchy config: {0}")]
    Io(#[from] std::io::Error),
}

/// One node entry of the hierarchy config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub label: String,
    pub depth: usize,
    pub parent: Option<String>,
    pub surface: String,
    /// Alternative spellings accepted when resolving corpus senses and
    /// generated answers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Name shown in chat-style candidate lists, when it differs from `label`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
}

/// The hierarchy config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub depth: usize,
    pub nodes: Vec<NodeConfig>,
}

impl HierarchyConfig {
    pub fn builtin(name: &str) -> Result<Self, HierarchyError> {
        let text = match name {
            "pdtb2" => PDTB2_CONFIG,
            "conll16" => CONLL16_CONFIG,
            other => return Err(HierarchyError::UnknownBuiltin(other.to_string())),
        };
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json(text: &str) -> Result<Self, HierarchyError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct LabelNode {
    pub label: String,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub surface: String,
    pub aliases: Vec<String>,
    pub display: Option<String>,
    pub children: Vec<NodeId>,
}

impl LabelNode {
    /// The name used in chat-style candidate lists.
    pub fn display_label(&self) -> &str {
        self.display.as_deref().unwrap_or(&self.label)
    }

    /// Canonical label, display name and aliases.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.label.as_str())
            .chain(self.display.as_deref())
            .chain(self.aliases.iter().map(String::as_str))
    }

    fn answers_to(&self, name: &str) -> bool {
        let name = name.trim();
        self.names().any(|n| n.eq_ignore_ascii_case(name))
    }
}

/// A root-to-leaf chain `[top, second, connective]` with a dense id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SensePath {
    pub id: usize,
    pub nodes: Vec<NodeId>,
}

impl SensePath {
    /// Node at `depth` (1-based); `None` when out of range.
    pub fn node_at(&self, depth: usize) -> Option<NodeId> {
        depth.checked_sub(1).and_then(|k| self.nodes.get(k).copied())
    }

    pub fn leaf(&self) -> NodeId {
        *self.nodes.last().expect("paths are never empty")
    }
}

/// Validated, immutable label tree.
#[derive(Debug, Clone)]
pub struct LabelHierarchy {
    name: String,
    comment: Option<String>,
    depth: usize,
    nodes: Vec<LabelNode>,
    roots: Vec<NodeId>,
    /// Node ids per depth (index 0 is depth 1), in enumeration order.
    levels: Vec<Vec<NodeId>>,
    /// Position of every node inside its level.
    level_index: Vec<usize>,
    paths: Vec<SensePath>,
}

impl LabelHierarchy {
    /// Load one of the embedded configs by name.
    pub fn builtin(name: &str) -> Result<Self, HierarchyError> {
        Self::from_config(&HierarchyConfig::builtin(name)?)
    }

    pub fn pdtb2() -> Self {
        Self::builtin("pdtb2").expect("embedded pdtb2 config is valid")
    }

    pub fn conll16() -> Self {
        Self::builtin("conll16").expect("embedded conll16 config is valid")
    }

    /// Resolve `spec` as a built-in name first, then as a config file path.
    pub fn load(spec: &str) -> Result<Self, HierarchyError> {
        if BUILTIN_HIERARCHIES.contains(&spec) {
            return Self::builtin(spec);
        }
        Self::from_file(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HierarchyError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config(&HierarchyConfig::from_json(&text)?)
    }

    pub fn from_config(config: &HierarchyConfig) -> Result<Self, HierarchyError> {
        let depth = config.depth;
        if depth < 2 {
            return Err(HierarchyError::TooShallow(depth));
        }

        let mut seen: HashSet<(usize, &str)> = HashSet::new();
        for node in &config.nodes {
            let label = node.label.as_str();
            if label.trim().is_empty() || label.contains("->") {
                return Err(HierarchyError::InvalidLabel {
                    label: label.to_string(),
                });
            }
            if node.surface.trim().is_empty() {
                return Err(HierarchyError::EmptySurface {
                    label: label.to_string(),
                });
            }
            if node.depth == 0 || node.depth > depth {
                return Err(HierarchyError::DepthOutOfRange {
                    label: label.to_string(),
                    depth: node.depth,
                    max: depth,
                });
            }
            if !seen.insert((node.depth, label)) {
                return Err(HierarchyError::DuplicateLabel {
                    label: label.to_string(),
                    depth: node.depth,
                });
            }
        }

        // Parent labels resolve at depth-1 first, then anywhere, so that
        // inconsistent configs surface as cycles or depth mismatches rather
        // than as orphans.
        let mut by_key: HashMap<(usize, &str), usize> = HashMap::new();
        let mut by_label: HashMap<&str, usize> = HashMap::new();
        for (i, node) in config.nodes.iter().enumerate() {
            by_key.insert((node.depth, node.label.as_str()), i);
            by_label.entry(node.label.as_str()).or_insert(i);
        }
        let mut parents: Vec<Option<usize>> = Vec::with_capacity(config.nodes.len());
        for node in &config.nodes {
            let parent = match node.parent.as_deref() {
                None => None,
                Some(p) => {
                    let found = node
                        .depth
                        .checked_sub(1)
                        .and_then(|d| by_key.get(&(d, p)))
                        .or_else(|| by_label.get(p))
                        .copied();
                    match found {
                        Some(i) => Some(i),
                        None => {
                            return Err(HierarchyError::Orphan {
                                label: node.label.clone(),
                                parent: p.to_string(),
                            })
                        }
                    }
                }
            };
            parents.push(parent);
        }

        for start in 0..config.nodes.len() {
            let mut visited = HashSet::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                if !visited.insert(i) {
                    return Err(HierarchyError::Cycle {
                        label: config.nodes[start].label.clone(),
                    });
                }
                cur = parents[i];
            }
        }

        for (node, parent) in config.nodes.iter().zip(&parents) {
            match parent {
                None if node.depth != 1 => {
                    return Err(HierarchyError::Orphan {
                        label: node.label.clone(),
                        parent: String::new(),
                    })
                }
                Some(_) if node.depth == 1 => {
                    return Err(HierarchyError::TopLevelWithParent {
                        label: node.label.clone(),
                    })
                }
                Some(p) if config.nodes[*p].depth + 1 != node.depth => {
                    return Err(HierarchyError::ParentDepthMismatch {
                        label: node.label.clone(),
                        depth: node.depth,
                        parent: config.nodes[*p].label.clone(),
                        parent_depth: config.nodes[*p].depth,
                    })
                }
                _ => {}
            }
        }

        for d in 1..=depth {
            if !config.nodes.iter().any(|n| n.depth == d) {
                return Err(HierarchyError::EmptyLevel { depth: d });
            }
        }

        let mut nodes: Vec<LabelNode> = config
            .nodes
            .iter()
            .zip(&parents)
            .map(|(n, p)| LabelNode {
                label: n.label.clone(),
                depth: n.depth,
                parent: p.map(NodeId),
                surface: n.surface.clone(),
                aliases: n.aliases.clone(),
                display: n.display.clone(),
                children: Vec::new(),
            })
            .collect();
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                nodes[*p].children.push(NodeId(i));
            }
        }
        for node in &nodes {
            if node.depth < depth && node.children.is_empty() {
                return Err(HierarchyError::Childless {
                    label: node.label.clone(),
                    depth: node.depth,
                });
            }
        }

        let roots: Vec<NodeId> = (0..nodes.len())
            .filter(|&i| nodes[i].depth == 1)
            .map(NodeId)
            .collect();

        let mut levels = vec![Vec::new(); depth];
        let mut paths = Vec::new();
        let mut stack: Vec<NodeId> = Vec::with_capacity(depth);
        for &root in &roots {
            walk(&nodes, root, &mut stack, &mut levels, &mut paths);
        }
        let mut level_index = vec![0; nodes.len()];
        for level in &levels {
            for (pos, id) in level.iter().enumerate() {
                level_index[id.0] = pos;
            }
        }

        Ok(Self {
            name: config.name.clone(),
            comment: config.comment.clone(),
            depth,
            nodes,
            roots,
            levels,
            level_index,
            paths,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn comment(&self) -> Option<&str> {
        self.comment.as_deref()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node(&self, id: NodeId) -> &LabelNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[LabelNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    /// Nodes at `depth` (1-based) in enumeration order.
    pub fn level(&self, depth: usize) -> Result<&[NodeId], HierarchyError> {
        depth
            .checked_sub(1)
            .and_then(|k| self.levels.get(k))
            .map(Vec::as_slice)
            .ok_or(HierarchyError::LevelOutOfRange {
                depth,
                max: self.depth,
            })
    }

    /// Position of `id` within its own level.
    pub fn level_index(&self, id: NodeId) -> usize {
        self.level_index[id.0]
    }

    /// Canonical labels at `depth`, in enumeration order.
    pub fn labels_at(&self, depth: usize) -> Result<Vec<&str>, HierarchyError> {
        Ok(self
            .level(depth)?
            .iter()
            .map(|&id| self.nodes[id.0].label.as_str())
            .collect())
    }

    /// Verbalizer surfaces at `depth`, in enumeration order.
    pub fn surfaces_at(&self, depth: usize) -> Result<Vec<&str>, HierarchyError> {
        Ok(self
            .level(depth)?
            .iter()
            .map(|&id| self.nodes[id.0].surface.as_str())
            .collect())
    }

    /// All root-to-leaf paths, ids `0..n` in depth-first config order.
    pub fn paths(&self) -> &[SensePath] {
        &self.paths
    }

    pub fn path(&self, id: usize) -> Option<&SensePath> {
        self.paths.get(id)
    }

    /// The node of `path` at `depth`.
    pub fn ancestor_at(&self, path: &SensePath, depth: usize) -> Result<&LabelNode, HierarchyError> {
        if depth == 0 || depth > self.depth {
            return Err(HierarchyError::LevelOutOfRange {
                depth,
                max: self.depth,
            });
        }
        let id = path.node_at(depth).ok_or(HierarchyError::LevelOutOfRange {
            depth,
            max: path.nodes.len(),
        })?;
        Ok(&self.nodes[id.0])
    }

    /// `"Top -> Second -> connective"`.
    pub fn path_string(&self, path: &SensePath) -> String {
        path.nodes
            .iter()
            .map(|id| self.nodes[id.0].label.as_str())
            .collect::<Vec<_>>()
            .join(PATH_SEPARATOR)
    }

    /// Labels along the path, top first.
    pub fn path_labels(&self, path: &SensePath) -> Vec<&str> {
        path.nodes
            .iter()
            .map(|id| self.nodes[id.0].label.as_str())
            .collect()
    }

    /// First path whose ancestor at `node`'s depth is `node`.
    pub fn first_path_through(&self, node: NodeId) -> Option<&SensePath> {
        let depth = self.nodes[node.0].depth;
        self.paths.iter().find(|p| p.node_at(depth) == Some(node))
    }

    /// Case-insensitive lookup of a node at `depth` by label, display name or alias.
    pub fn find_at_depth(&self, depth: usize, name: &str) -> Option<NodeId> {
        let level = self.level(depth).ok()?;
        level
            .iter()
            .copied()
            .find(|&id| self.nodes[id.0].answers_to(name))
    }

    /// Case-insensitive lookup among the children of `parent`.
    pub fn find_child(&self, parent: NodeId, name: &str) -> Option<NodeId> {
        self.nodes[parent.0]
            .children
            .iter()
            .copied()
            .find(|&id| self.nodes[id.0].answers_to(name))
    }

    /// Resolve a dotted corpus sense string to a second-level node.
    ///
    /// Accepts a bare second-level label (`"Contrast"`), a two-level sense
    /// (`"Comparison.Contrast"`), or a deeper sense
    /// (`"Contingency.Cause.Reason"`). For dotted senses the first component
    /// must name a top-level node; the deepest later component that names one
    /// of its children wins, so finer-grained senses are truncated onto this
    /// hierarchy's second level.
    pub fn resolve_sense(&self, sense: &str) -> Option<NodeId> {
        let parts: Vec<&str> = sense.split('.').map(str::trim).collect();
        if parts.iter().any(|p| p.is_empty()) {
            return None;
        }
        if parts.len() == 1 {
            return self.find_at_depth(2, parts[0]);
        }
        let top = self.find_at_depth(1, parts[0])?;
        parts[1..]
            .iter()
            .rev()
            .find_map(|p| self.find_child(top, p))
    }
}

fn walk(
    nodes: &[LabelNode],
    id: NodeId,
    stack: &mut Vec<NodeId>,
    levels: &mut [Vec<NodeId>],
    paths: &mut Vec<SensePath>,
) {
    let node = &nodes[id.0];
    levels[node.depth - 1].push(id);
    stack.push(id);
    if node.children.is_empty() {
        paths.push(SensePath {
            id: paths.len(),
            nodes: stack.clone(),
        });
    } else {
        for &child in &node.children {
            walk(nodes, child, stack, levels, paths);
        }
    }
    stack.pop();
}

impl fmt::Display for LabelHierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (depth {}, {} paths)", self.name, self.depth, self.paths.len())?;
        for p in &self.paths {
            writeln!(f, "{:>3}  {}", p.id, self.path_string(p))?;
        }
        Ok(())
    }
}
