//! Instance types for the three tasks and their validation rules.

mod vocab;

pub use vocab::{fnv1a64, CharVocab, EmbeddingTable, Vocabulary};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label meaning that no relation from the relation set holds.
pub const NONE_LABEL: &str = "None";

/// Longest sentence accepted for training; prediction inputs are cut to it.
pub const MAX_SENTENCE_TOKENS: usize = 100;

/// Inclusive token span `[start, end]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

impl Span {
    pub fn start(self) -> usize {
        self.0
    }

    pub fn end(self) -> usize {
        self.1
    }

    pub fn len(self) -> usize {
        self.1 + 1 - self.0
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn overlaps(self, other: Span) -> bool {
        self.0 <= other.1 && other.0 <= self.1
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 <= i && i <= self.1
    }

    pub fn tokens(self) -> core::ops::RangeInclusive<usize> {
        self.0..=self.1
    }

    pub fn check(self, n: usize, field: &str) -> Result<()> {
        if self.0 > self.1 {
            return Err(Error::validation(field, format!("start ≤ end violated by {self:?}")));
        }
        if self.1 >= n {
            return Err(Error::validation(
                field,
                format!("{self:?} outside a sequence of {n} tokens"),
            ));
        }
        Ok(())
    }
}

/// Space-joined surface string of a span.
pub fn span_text(tokens: &[String], span: Span) -> String {
    tokens[span.0..=span.1].join(" ")
}

/// Case-insensitive, whitespace-normalized entity key.
pub fn canonical(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// The declared relation labels. `None` is implicit and never listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSet {
    names: Vec<String>,
}

impl RelationSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for n in &names {
            if n == NONE_LABEL {
                return Err(Error::validation("relations", "None is implicit and must not be listed"));
            }
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::validation(
                    "relations",
                    format!("relation name {n:?} must be a single nonempty token"),
                ));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::validation("relations", format!("duplicate relation {n}")));
            }
        }
        Ok(RelationSet { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Index among the positive relations.
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Class index with `None` at 0 and relations from 1.
    pub fn class_index(&self, label: &str) -> Option<usize> {
        if label == NONE_LABEL {
            Some(0)
        } else {
            self.index(label).map(|i| i + 1)
        }
    }

    pub fn class_label(&self, class: usize) -> &str {
        if class == 0 {
            NONE_LABEL
        } else {
            &self.names[class - 1]
        }
    }

    /// Number of classes including `None`.
    pub fn class_count(&self) -> usize {
        self.names.len() + 1
    }

    fn check_label(&self, label: &str, allow_none: bool) -> Result<()> {
        if (allow_none && label == NONE_LABEL) || self.contains(label) {
            Ok(())
        } else {
            Err(Error::validation("relation", format!("unknown relation label {label:?}")))
        }
    }
}

fn check_tokens(tokens: &[String], field: &str) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::validation(field, "no tokens"));
    }
    if let Some(t) = tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
        return Err(Error::validation(field, format!("token {t:?} is empty or contains whitespace")));
    }
    Ok(())
}

/// A sentence with two marked entities, their relation and a dependency tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub tokens: Vec<String>,
    pub e1_span: Span,
    pub e2_span: Span,
    /// Absent in unlabeled input, read as `None`.
    #[serde(default = "none_label")]
    pub relation: String,
    /// `(parent, child)` pairs.
    pub dep_edges: Vec<(usize, usize)>,
}

impl RelationInstance {
    pub fn validate(&self, relations: &RelationSet) -> Result<()> {
        check_tokens(&self.tokens, "tokens")?;
        let n = self.tokens.len();
        self.e1_span.check(n, "e1_span")?;
        self.e2_span.check(n, "e2_span")?;
        if self.e1_span.overlaps(self.e2_span) {
            return Err(Error::validation("e2_span", "entity spans overlap"));
        }
        relations.check_label(&self.relation, true)?;
        dependency_root(n, &self.dep_edges)?;
        Ok(())
    }

    /// Cuts the sentence to `max` tokens. Tokens whose parent was cut are
    /// re-attached to the old root when it survives, otherwise to the first
    /// such orphan. Returns whether anything was cut.
    pub fn truncate(&mut self, max: usize) -> Result<bool> {
        let n = self.tokens.len();
        if n <= max {
            return Ok(false);
        }
        if self.e1_span.end() >= max || self.e2_span.end() >= max {
            return Err(Error::validation(
                "tokens",
                format!("an entity lies beyond the {max}-token limit"),
            ));
        }
        let root = dependency_root(n, &self.dep_edges)?;
        let mut parent = vec![None; n];
        for &(p, c) in &self.dep_edges {
            parent[c] = Some(p);
        }
        let new_root = if root < max {
            root
        } else {
            (0..max)
                .find(|&c| parent[c].is_some_and(|p| p >= max))
                .ok_or_else(|| Error::validation("dep_edges", "cannot re-root truncated tree"))?
        };
        let mut edges = Vec::with_capacity(max - 1);
        for (c, p) in parent.iter().enumerate().take(max) {
            match *p {
                Some(p) if p < max => edges.push((p, c)),
                Some(_) if c != new_root => edges.push((new_root, c)),
                _ => {}
            }
        }
        self.tokens.truncate(max);
        self.dep_edges = edges;
        Ok(true)
    }
}

/// Root of the dependency tree described by `edges` over `n` tokens.
pub fn dependency_root(n: usize, edges: &[(usize, usize)]) -> Result<usize> {
    let field = "dep_edges";
    if edges.len() + 1 != n {
        return Err(Error::validation(
            field,
            format!("{} edges cannot form a tree over {n} tokens", edges.len()),
        ));
    }
    let mut parent = vec![usize::MAX; n];
    for &(p, c) in edges {
        if p >= n || c >= n {
            return Err(Error::validation(field, format!("edge ({p}, {c}) out of bounds")));
        }
        if p == c {
            return Err(Error::validation(field, format!("self loop at {p}")));
        }
        if parent[c] != usize::MAX {
            return Err(Error::validation(field, format!("token {c} has two parents")));
        }
        parent[c] = p;
    }
    let roots: Vec<usize> = (0..n).filter(|&i| parent[i] == usize::MAX).collect();
    if roots.len() != 1 {
        return Err(Error::validation(field, format!("{} roots", roots.len())));
    }
    // every token must reach the root without revisiting a node
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while parent[cur] != usize::MAX {
            cur = parent[cur];
            steps += 1;
            if steps > n {
                return Err(Error::validation(field, "cycle in dependency edges"));
            }
        }
    }
    Ok(roots[0])
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointTuple {
    pub e1_span: Span,
    pub e2_span: Span,
    pub relation: String,
}

/// A sentence with every relation tuple it expresses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointInstance {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub tuples: Vec<JointTuple>,
}

/// Surface form of a tuple used for matching and evaluation.
pub type TupleStrings = (String, String, String);

impl JointInstance {
    pub fn validate(&self, relations: &RelationSet) -> Result<()> {
        check_tokens(&self.tokens, "tokens")?;
        let n = self.tokens.len();
        let mut seen = BTreeSet::new();
        for t in &self.tuples {
            t.e1_span.check(n, "tuples.e1_span")?;
            t.e2_span.check(n, "tuples.e2_span")?;
            if t.e1_span.overlaps(t.e2_span) {
                return Err(Error::validation("tuples", "the two entities of a tuple overlap"));
            }
            relations
                .check_label(&t.relation, false)
                .map_err(|_| Error::validation("tuples.relation", format!("unknown relation {:?}", t.relation)))?;
            if !seen.insert(t) {
                return Err(Error::validation("tuples", "duplicate tuple"));
            }
        }
        Ok(())
    }

    pub fn tuple_strings(&self) -> BTreeSet<TupleStrings> {
        self.tuples
            .iter()
            .map(|t| {
                (
                    span_text(&self.tokens, t.e1_span),
                    span_text(&self.tokens, t.e2_span),
                    t.relation.clone(),
                )
            })
            .collect()
    }

    /// Cuts to `max` tokens; fails if a tuple would be cut.
    pub fn truncate(&mut self, max: usize) -> Result<bool> {
        if self.tokens.len() <= max {
            return Ok(false);
        }
        if self.tuples.iter().any(|t| t.e1_span.end() >= max || t.e2_span.end() >= max) {
            return Err(Error::validation(
                "tokens",
                format!("a tuple lies beyond the {max}-token limit"),
            ));
        }
        self.tokens.truncate(max);
        Ok(true)
    }
}

/// Overlap class of a sentence's tuple set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapClass {
    Neo,
    Epo,
    Seo,
    EpoSeo,
}

pub fn classify_overlap(inst: &JointInstance) -> Result<OverlapClass> {
    if inst.tuples.is_empty() {
        return Err(Error::domain("overlap class of an empty tuple set"));
    }
    let (mut epo, mut seo) = (false, false);
    for (i, a) in inst.tuples.iter().enumerate() {
        for b in &inst.tuples[i + 1..] {
            let shared = [a.e1_span, a.e2_span]
                .iter()
                .filter(|s| **s == b.e1_span || **s == b.e2_span)
                .count();
            match shared {
                2 => epo = true,
                1 => seo = true,
                _ => {}
            }
        }
    }
    Ok(match (epo, seo) {
        (false, false) => OverlapClass::Neo,
        (true, false) => OverlapClass::Epo,
        (false, true) => OverlapClass::Seo,
        (true, true) => OverlapClass::EpoSeo,
    })
}

/// An entity appearing in both documents of a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonEntity {
    pub name: String,
    pub mentions_1: Vec<Span>,
    pub mentions_2: Vec<Span>,
}

/// Two documents linked by common entities, subject in the first and object
/// in the second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainInstance {
    pub doc1_tokens: Vec<String>,
    pub doc2_tokens: Vec<String>,
    pub sent_ids_1: Vec<usize>,
    pub sent_ids_2: Vec<usize>,
    pub subject_mentions: Vec<Span>,
    pub object_mentions: Vec<Span>,
    pub common_entities: Vec<CommonEntity>,
    /// Absent in unlabeled input, read as `None`.
    #[serde(default = "none_label")]
    pub relation: String,
    /// Further entity mentions of the first document (graph nodes only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub other_mentions_1: Vec<Span>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub other_mentions_2: Vec<Span>,
}

fn check_doc(tokens: &[String], sent_ids: &[usize], field: &str) -> Result<()> {
    check_tokens(tokens, field)?;
    if sent_ids.len() != tokens.len() {
        return Err(Error::validation(
            field,
            format!("{} sentence ids for {} tokens", sent_ids.len(), tokens.len()),
        ));
    }
    if sent_ids.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::validation(field, "sentence ids decrease"));
    }
    Ok(())
}

fn check_mentions(spans: &[Span], sent_ids: &[usize], field: &str) -> Result<()> {
    for &s in spans {
        s.check(sent_ids.len(), field)?;
        if sent_ids[s.0] != sent_ids[s.1] {
            return Err(Error::validation(field, format!("{s:?} crosses a sentence boundary")));
        }
    }
    Ok(())
}

impl ChainInstance {
    pub fn validate(&self, relations: &RelationSet) -> Result<()> {
        check_doc(&self.doc1_tokens, &self.sent_ids_1, "doc1_tokens")?;
        check_doc(&self.doc2_tokens, &self.sent_ids_2, "doc2_tokens")?;
        if self.subject_mentions.is_empty() {
            return Err(Error::validation("subject_mentions", "no subject mention"));
        }
        if self.object_mentions.is_empty() {
            return Err(Error::validation("object_mentions", "no object mention"));
        }
        check_mentions(&self.subject_mentions, &self.sent_ids_1, "subject_mentions")?;
        check_mentions(&self.object_mentions, &self.sent_ids_2, "object_mentions")?;
        check_mentions(&self.other_mentions_1, &self.sent_ids_1, "other_mentions_1")?;
        check_mentions(&self.other_mentions_2, &self.sent_ids_2, "other_mentions_2")?;
        if self.common_entities.is_empty() {
            return Err(Error::validation("common_entities", "no common entity"));
        }
        for c in &self.common_entities {
            if c.mentions_1.is_empty() || c.mentions_2.is_empty() {
                return Err(Error::validation(
                    "common_entities",
                    format!("{:?} needs a mention in each document", c.name),
                ));
            }
            check_mentions(&c.mentions_1, &self.sent_ids_1, "common_entities.mentions_1")?;
            check_mentions(&c.mentions_2, &self.sent_ids_2, "common_entities.mentions_2")?;
        }
        relations.check_label(&self.relation, true)?;
        Ok(())
    }

    pub fn subject_text(&self) -> String {
        span_text(&self.doc1_tokens, self.subject_mentions[0])
    }

    pub fn object_text(&self) -> String {
        span_text(&self.doc2_tokens, self.object_mentions[0])
    }
}

/// Record kinds of the dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Sentence,
    Joint,
    Chain,
}

impl core::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(DatasetKind::Sentence),
            "joint" => Ok(DatasetKind::Joint),
            "chain" => Ok(DatasetKind::Chain),
            other => Err(Error::config(format!("unknown dataset kind {other:?}"))),
        }
    }
}

impl core::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            DatasetKind::Sentence => "sentence",
            DatasetKind::Joint => "joint",
            DatasetKind::Chain => "chain",
        })
    }
}

fn none_label() -> String {
    NONE_LABEL.to_string()
}

/// Splits a whitespace-separated string into owned tokens.
pub fn tokenize_ws(text: &str) -> Vec<String> {
    text.split_whitespace().map(ToString::to_string).collect()
}
