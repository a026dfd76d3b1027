//! Structure-aware prompt templates, chat-style zero-shot prompts, and
//! lenient parsing of generated path strings.
//!
//! The canonical template renders as
//!
//! ```text
//! <soft_0> ... <soft_{n-1}> {tree prompt}. {arg1} <extra_mask_0> {arg2} The path is <extra_mask_1> -> <extra_mask_2>
//! ```
//!
//! where the three masks take the connective, top-level and second-level
//! roles. Mask markers are numbered by slot index in order of appearance and
//! their character spans are recorded in [`RenderedPrompt::mask_spans`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instance;
use crate::hierarchy::{LabelHierarchy, SensePath, PATH_SEPARATOR};
use crate::mask::MaskRole;

pub const DEFAULT_SOFT_TOKENS: usize = 20;
pub const CLOZE_TEXT: &str = "The path is";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("{0} is empty")]
    EmptyArgument(&'static str),
    #[error("mask role {0} appears more than once in the template")]
    DuplicateMask(MaskRole),
    #[error("template has no segments")]
    EmptyTemplate,
    #[error("unknown template variant {0:?}")]
    UnknownVariant(String),
    #[error("unknown chat prompt kind {0:?}")]
    UnknownChatKind(String),
    #[error("unparseable path answer: {0:?}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateVariant {
    Discoprompt,
    NoTree,
    NoCloze,
    NoDiscrete,
    T5Adapt,
    ChatLabel,
    ChatLabelConn,
    ChatStructure,
}

impl TemplateVariant {
    pub const ALL: [TemplateVariant; 8] = [
        TemplateVariant::Discoprompt,
        TemplateVariant::NoTree,
        TemplateVariant::NoCloze,
        TemplateVariant::NoDiscrete,
        TemplateVariant::T5Adapt,
        TemplateVariant::ChatLabel,
        TemplateVariant::ChatLabelConn,
        TemplateVariant::ChatStructure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateVariant::Discoprompt => "discoprompt",
            TemplateVariant::NoTree => "no_tree",
            TemplateVariant::NoCloze => "no_cloze",
            TemplateVariant::NoDiscrete => "no_discrete",
            TemplateVariant::T5Adapt => "t5_adapt",
            TemplateVariant::ChatLabel => "chat_label",
            TemplateVariant::ChatLabelConn => "chat_label_conn",
            TemplateVariant::ChatStructure => "chat_structure",
        }
    }

    pub fn chat_kind(self) -> Option<ChatKind> {
        match self {
            TemplateVariant::ChatLabel => Some(ChatKind::Label),
            TemplateVariant::ChatLabelConn => Some(ChatKind::LabelConn),
            TemplateVariant::ChatStructure => Some(ChatKind::Structure),
            _ => None,
        }
    }
}

impl fmt::Display for TemplateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| PromptError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    SoftTokens(usize),
    Literal(String),
    TreePrompt,
    Arg1,
    Arg2,
    Mask(MaskRole),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub variant: TemplateVariant,
    pub soft_token_count: usize,
    pub segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(variant: TemplateVariant, soft_token_count: usize) -> Self {
        use Segment::*;
        let soft = SoftTokens(soft_token_count);
        let cloze = || Literal(CLOZE_TEXT.to_string());
        let arrow = || Literal("->".to_string());
        let segments = match variant {
            TemplateVariant::Discoprompt => vec![
                soft, TreePrompt, Arg1, Mask(MaskRole::Connective), Arg2, cloze(),
                Mask(MaskRole::Top), arrow(), Mask(MaskRole::Second),
            ],
            TemplateVariant::NoTree => vec![
                soft, Arg1, Mask(MaskRole::Connective), Arg2, cloze(),
                Mask(MaskRole::Top), arrow(), Mask(MaskRole::Second),
            ],
            TemplateVariant::NoCloze => vec![
                soft, TreePrompt, Arg1, Mask(MaskRole::Connective), Arg2,
                Mask(MaskRole::Top), arrow(), Mask(MaskRole::Second),
            ],
            TemplateVariant::NoDiscrete => vec![
                soft, Arg1, Mask(MaskRole::Connective), Arg2,
                Mask(MaskRole::Top), arrow(), Mask(MaskRole::Second),
            ],
            TemplateVariant::T5Adapt => vec![
                soft, TreePrompt, Arg1, Arg2, cloze(), Mask(MaskRole::WholePath),
            ],
            TemplateVariant::ChatLabel | TemplateVariant::ChatLabelConn | TemplateVariant::ChatStructure => {
                let kind = variant.chat_kind().expect("chat variant");
                vec![
                    Literal("Argument 1:".into()),
                    Arg1,
                    Literal("Argument 2:".into()),
                    Arg2,
                    Literal(format!(
                        "What is the relation {} between Argument 1 and Argument 2? Select from the candidates.",
                        kind.question_word()
                    )),
                ]
            }
        };
        Self {
            variant,
            soft_token_count,
            segments,
        }
    }

    pub fn discoprompt() -> Self {
        Self::new(TemplateVariant::Discoprompt, DEFAULT_SOFT_TOKENS)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.segments.is_empty() {
            return Err(PromptError::EmptyTemplate);
        }
        let mut seen = Vec::new();
        for role in self.mask_roles() {
            if seen.contains(&role) {
                return Err(PromptError::DuplicateMask(role));
            }
            seen.push(role);
        }
        Ok(())
    }

    /// Mask roles in slot order.
    pub fn mask_roles(&self) -> Vec<MaskRole> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Mask(r) => Some(*r),
                _ => None,
            })
            .collect()
    }

    /// The same template with the connective slot filled by literal text,
    /// as used for explicit relations with a known connective.
    pub fn with_connective(&self, connective: &str) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Mask(MaskRole::Connective) => Segment::Literal(connective.to_string()),
                other => other.clone(),
            })
            .collect();
        Self {
            segments,
            ..self.clone()
        }
    }
}

/// Output of [`render`]: prompt text, mask marker spans (character offsets,
/// end exclusive) and candidate surfaces per mask role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub mask_spans: BTreeMap<MaskRole, [usize; 2]>,
    pub candidate_sets: BTreeMap<MaskRole, Vec<String>>,
    #[serde(skip)]
    pub soft_token_count: usize,
}

/// `"Top -> Second -> connective"` clauses for every path, joined by `"; "`.
pub fn tree_prompt(h: &LabelHierarchy) -> String {
    h.paths()
        .iter()
        .map(|p| {
            p.nodes
                .iter()
                .map(|&id| h.node(id).surface.as_str())
                .collect::<Vec<_>>()
                .join(PATH_SEPARATOR)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn mask_marker(slot: usize) -> String {
    format!("<extra_mask_{slot}>")
}

/// Candidate surfaces for a mask role, in hierarchy enumeration order.
pub fn candidates(h: &LabelHierarchy, role: MaskRole) -> Vec<String> {
    match role.depth() {
        Some(d) => h
            .surfaces_at(d)
            .map(|v| v.into_iter().map(String::from).collect())
            .unwrap_or_default(),
        None => h.paths().iter().map(|p| h.path_string(p)).collect(),
    }
}

pub fn render(t: &PromptTemplate, inst: &Instance, h: &LabelHierarchy) -> Result<RenderedPrompt, PromptError> {
    t.validate()?;
    if inst.arg1.trim().is_empty() {
        return Err(PromptError::EmptyArgument("arg1"));
    }
    if inst.arg2.trim().is_empty() {
        return Err(PromptError::EmptyArgument("arg2"));
    }

    let mut text = String::new();
    let mut chars = 0usize;
    let mut mask_spans = BTreeMap::new();
    let mut candidate_sets = BTreeMap::new();
    let mut slot = 0usize;
    let mut push = |text: &mut String, piece: &str| -> usize {
        if !text.is_empty() {
            text.push(' ');
            chars += 1;
        }
        let start = chars;
        text.push_str(piece);
        chars += piece.chars().count();
        start
    };

    for seg in &t.segments {
        match seg {
            Segment::SoftTokens(0) => {}
            Segment::SoftTokens(n) => {
                let soft = (0..*n).map(|k| format!("<soft_{k}>")).collect::<Vec<_>>().join(" ");
                push(&mut text, &soft);
            }
            Segment::Literal(s) => {
                push(&mut text, s);
            }
            Segment::TreePrompt => {
                push(&mut text, &format!("{}.", tree_prompt(h)));
            }
            Segment::Arg1 => {
                push(&mut text, &inst.arg1);
            }
            Segment::Arg2 => {
                push(&mut text, &inst.arg2);
            }
            Segment::Mask(role) => {
                let marker = mask_marker(slot);
                let start = push(&mut text, &marker);
                mask_spans.insert(*role, [start, start + marker.chars().count()]);
                candidate_sets.insert(*role, candidates(h, *role));
                slot += 1;
            }
        }
    }

    if let Some(kind) = t.variant.chat_kind() {
        for line in chat_candidates(kind, h) {
            text.push('\n');
            text.push_str(&line);
        }
    }

    Ok(RenderedPrompt {
        text,
        mask_spans,
        candidate_sets,
        soft_token_count: t.soft_token_count,
    })
}

/// Zero-shot chat template families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatKind {
    Label,
    LabelConn,
    Structure,
}

impl ChatKind {
    fn question_word(self) -> &'static str {
        match self {
            ChatKind::Label => "label",
            ChatKind::LabelConn => "and connective",
            ChatKind::Structure => "path",
        }
    }

    pub fn variant(self) -> TemplateVariant {
        match self {
            ChatKind::Label => TemplateVariant::ChatLabel,
            ChatKind::LabelConn => TemplateVariant::ChatLabelConn,
            ChatKind::Structure => TemplateVariant::ChatStructure,
        }
    }
}

impl FromStr for ChatKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "label" => Ok(ChatKind::Label),
            "label-conn" => Ok(ChatKind::LabelConn),
            "structure" | "path" => Ok(ChatKind::Structure),
            _ => Err(PromptError::UnknownChatKind(s.to_string())),
        }
    }
}

/// Numbered candidate lines (`"1. ..."`), one per path in enumeration order.
pub fn chat_candidates(kind: ChatKind, h: &LabelHierarchy) -> Vec<String> {
    h.paths()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let names: Vec<&str> = p.nodes.iter().map(|&id| h.node(id).display_label()).collect();
            let (top, second) = (names[0], names[1]);
            let conn = names.last().copied().unwrap_or_default();
            let body = match kind {
                ChatKind::Label => format!("{top}.{second}"),
                ChatKind::LabelConn => format!("{top}.{second}, {conn}"),
                ChatKind::Structure => names.join(PATH_SEPARATOR),
            };
            format!("{}. {body}", i + 1)
        })
        .collect()
}

pub fn chat_prompt(kind: ChatKind, inst: &Instance, h: &LabelHierarchy) -> Result<String, PromptError> {
    Ok(render(&PromptTemplate::new(kind.variant(), 0), inst, h)?.text)
}

fn normalize_answer(text: &str) -> String {
    static_regexes()
        .arrow
        .replace_all(&text.to_lowercase().replace('→', "->"), " -> ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

struct Regexes {
    arrow: Regex,
}

fn static_regexes() -> &'static Regexes {
    static CELL: std::sync::OnceLock<Regexes> = std::sync::OnceLock::new();
    CELL.get_or_init(|| Regexes {
        arrow: Regex::new(r"\s*-+>\s*").expect("valid regex"),
    })
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Extract the first path mentioned in free-form generated text.
///
/// Recognizes `"Top -> Second"`, `"Top -> Second -> connective"`,
/// `"Top.Second"` and `"Top.Second, connective"`, matching labels, display
/// names and aliases case-insensitively. The earliest match wins; at equal
/// positions the longest. When no connective is matched the first
/// connective under the second-level node is used.
pub fn parse_path<'h>(text: &str, h: &'h LabelHierarchy) -> Result<&'h SensePath, PromptError> {
    let norm = normalize_answer(text);
    // (start, -len, path id)
    let mut best: Option<(usize, isize, usize)> = None;
    let mut consider = |form: &str, path_id: usize| {
        for (start, m) in norm.match_indices(form) {
            let before = norm[..start].chars().next_back();
            let after = norm[start + m.len()..].chars().next();
            if is_word_char(before) || is_word_char(after) {
                continue;
            }
            let key = (start, -(m.len() as isize), path_id);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
            break;
        }
    };

    for path in h.paths() {
        let Some(top) = path.node_at(1) else { continue };
        let Some(second) = path.node_at(2) else { continue };
        let leaf_first = h.first_path_through(second).map(|p| p.id) == Some(path.id);
        let conn = (h.depth() >= 3).then(|| path.leaf());
        for t in h.node(top).names() {
            for s in h.node(second).names() {
                let (t, s) = (t.to_lowercase(), s.to_lowercase());
                if leaf_first {
                    consider(&format!("{t} -> {s}"), path.id);
                    consider(&format!("{t}.{s}"), path.id);
                }
                if let Some(c) = conn {
                    for c in h.node(c).names() {
                        let c = c.to_lowercase();
                        consider(&format!("{t} -> {s} -> {c}"), path.id);
                        consider(&format!("{t}.{s}, {c}"), path.id);
                    }
                }
            }
        }
    }

    best.and_then(|(_, _, id)| h.path(id))
        .ok_or_else(|| PromptError::Unparseable(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{HierarchyConfig, NodeConfig};

    fn minimal() -> LabelHierarchy {
        let node = |label: &str, depth, parent: Option<&str>| NodeConfig {
            label: label.into(),
            depth,
            parent: parent.map(Into::into),
            surface: label.into(),
            aliases: vec![],
            display: None,
        };
        LabelHierarchy::from_config(&HierarchyConfig {
            name: "min".into(),
            comment: None,
            depth: 3,
            nodes: vec![node("A", 1, None), node("B", 2, Some("A")), node("c", 3, Some("B"))],
        })
        .unwrap()
    }

    #[test]
    fn tree_prompt_minimal_and_pdtb() {
        assert_eq!(tree_prompt(&minimal()), "A -> B -> c");
        let t = tree_prompt(&LabelHierarchy::pdtb2());
        assert!(t.starts_with("Comparison -> Concession -> if; Comparison -> Contrast -> however; "));
        assert_eq!(t.split("; ").count(), 11);
        assert!(t.ends_with("Temporal -> Synchrony -> when"));
        let c = tree_prompt(&LabelHierarchy::conll16());
        let clauses: Vec<_> = c.split("; ").collect();
        assert_eq!(clauses.len(), 14);
        assert_eq!(clauses.iter().filter(|s| s.starts_with("Expansion")).count(), 6);
    }

    #[test]
    fn render_no_tree_minimal() {
        let h = minimal();
        let inst = Instance::implicit("x", "a", "b");
        let r = render(&PromptTemplate::new(TemplateVariant::NoTree, 0), &inst, &h).unwrap();
        assert_eq!(r.text, "a <extra_mask_0> b The path is <extra_mask_1> -> <extra_mask_2>");
        for (role, [s, e]) in &r.mask_spans {
            let marker: String = r.text.chars().skip(*s).take(e - s).collect();
            assert!(marker.starts_with("<extra_mask_"), "{role}");
        }
        assert_eq!(r.mask_spans[&MaskRole::Connective], [2, 16]);
    }

    #[test]
    fn spans_are_character_offsets() {
        let h = minimal();
        let inst = Instance::implicit("x", "héllo wörld", "b");
        let r = render(&PromptTemplate::new(TemplateVariant::NoTree, 0), &inst, &h).unwrap();
        let [s, e] = r.mask_spans[&MaskRole::Connective];
        let marker: String = r.text.chars().skip(s).take(e - s).collect();
        assert_eq!(marker, "<extra_mask_0>");
    }

    #[test]
    fn soft_tokens_prefix() {
        let h = minimal();
        let inst = Instance::implicit("x", "a", "b");
        let r = render(&PromptTemplate::new(TemplateVariant::NoDiscrete, 2), &inst, &h).unwrap();
        assert_eq!(r.text, "<soft_0> <soft_1> a <extra_mask_0> b <extra_mask_1> -> <extra_mask_2>");
        assert_eq!(r.soft_token_count, 2);
    }

    #[test]
    fn empty_argument() {
        let h = minimal();
        let inst = Instance::implicit("x", "  ", "b");
        assert_eq!(
            render(&PromptTemplate::discoprompt(), &inst, &h),
            Err(PromptError::EmptyArgument("arg1"))
        );
    }

    #[test]
    fn duplicate_mask_rejected() {
        let mut t = PromptTemplate::discoprompt();
        t.segments.push(Segment::Mask(MaskRole::Top));
        assert_eq!(t.validate(), Err(PromptError::DuplicateMask(MaskRole::Top)));
    }

    #[test]
    fn variant_mask_counts() {
        for v in TemplateVariant::ALL {
            let t = PromptTemplate::new(v, DEFAULT_SOFT_TOKENS);
            let n = t.mask_roles().len();
            match v {
                TemplateVariant::T5Adapt => assert_eq!(n, 1),
                v if v.chat_kind().is_some() => assert_eq!(n, 0),
                TemplateVariant::Discoprompt => assert_eq!(
                    t.mask_roles(),
                    [MaskRole::Connective, MaskRole::Top, MaskRole::Second]
                ),
                _ => assert_eq!(n, 3),
            }
        }
    }

    #[test]
    fn pdtb_candidate_sets() {
        let h = LabelHierarchy::pdtb2();
        let inst = Instance::implicit("x", "a", "b");
        let r = render(&PromptTemplate::discoprompt(), &inst, &h).unwrap();
        assert_eq!(
            r.candidate_sets[&MaskRole::Top],
            ["Comparison", "Contingency", "Expansion", "Temporal"]
        );
        assert_eq!(r.candidate_sets[&MaskRole::Connective][6], "for example");
    }

    #[test]
    fn chat_prompt_lines() {
        let h = LabelHierarchy::pdtb2();
        let inst = Instance::implicit("x", "a", "b");
        let s = chat_prompt(ChatKind::Structure, &inst, &h).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[8], "8. Expansion -> List -> and");
        assert!(lines[0].starts_with("Argument 1: a Argument 2: b What is the relation path"));
        let s = chat_prompt(ChatKind::Label, &inst, &h).unwrap();
        assert_eq!(s.lines().nth(2), Some("2. Comparison.Contrast"));
        let s = chat_prompt(ChatKind::LabelConn, &inst, &h).unwrap();
        assert_eq!(s.lines().nth(7), Some("7. Expansion.Instantiation, for example"));
        assert!(s.contains("What is the relation and connective between"));
    }

    #[test]
    fn parse_answers() {
        let h = LabelHierarchy::pdtb2();
        let p = parse_path("Expansion -> List -> and", &h).unwrap();
        assert_eq!(h.path_string(p), "Expansion -> List -> and");
        let p = parse_path("ChatGPT: temporal->synchrony->when.", &h).unwrap();
        assert_eq!(h.path_string(p), "Temporal -> Synchrony -> when");
        let p = parse_path("Expansion.Instantiation, for example", &h).unwrap();
        assert_eq!(h.path_labels(p)[1], "Instantiation");
        let p = parse_path("4. Contingency.Pragmatic", &h).unwrap();
        assert_eq!(h.path_labels(p)[1], "Justification");
        let p = parse_path("I think Comparison -> Contrast -> but", &h).unwrap();
        assert_eq!(h.path_labels(p), ["Comparison", "Contrast", "however"]);
        assert!(matches!(
            parse_path("the relation is unclear", &h),
            Err(PromptError::Unparseable(_))
        ));
        assert!(parse_path("Comparison -> Cause", &h).is_err());
        assert!(parse_path("Expansion.Listing", &h).is_err());
    }

    #[test]
    fn parse_prefers_earliest_mention() {
        let h = LabelHierarchy::pdtb2();
        let p = parse_path("Temporal.Synchrony, not Comparison.Contrast", &h).unwrap();
        assert_eq!(h.path_labels(p)[1], "Synchrony");
    }
}
