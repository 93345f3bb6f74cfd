//! Builds two-document chain instances from multi-hop question records and a
//! knowledge base of entity pairs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{canonical, ChainInstance, CommonEntity, RelationSet, Span, NONE_LABEL};
use crate::error::{Error, Result};

/// Entity mention produced by an upstream recognizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalMention {
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDocument {
    pub tokens: Vec<String>,
    pub sent_ids: Vec<usize>,
    #[serde(default)]
    pub mentions: Vec<ExternalMention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub relation: String,
    pub subject: String,
    pub candidates: Vec<String>,
    pub answer: String,
    pub documents: Vec<QaDocument>,
}

impl QaRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.candidates.contains(&self.answer) {
            return Err(Error::validation("answer", "answer is not among the candidates"));
        }
        if self.documents.len() < 2 {
            return Err(Error::validation("documents", "need at least two documents"));
        }
        if self.relation.is_empty() || self.relation == NONE_LABEL {
            return Err(Error::validation("relation", "query relation must be a named relation"));
        }
        for d in &self.documents {
            if d.tokens.len() != d.sent_ids.len() {
                return Err(Error::validation("sent_ids", "one sentence id per token"));
            }
            if d.sent_ids.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::validation("sent_ids", "sentence ids decrease"));
            }
            for m in &d.mentions {
                m.span.check(d.tokens.len(), "mentions")?;
            }
        }
        Ok(())
    }
}

/// Knowledge-base triples keyed by canonical entity strings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KbIndex {
    pairs: BTreeMap<(String, String), BTreeSet<String>>,
}

impl KbIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, subject: &str, object: &str, relation: &str) {
        self.pairs
            .entry((canonical(subject), canonical(object)))
            .or_default()
            .insert(relation.into());
    }

    /// Order-sensitive: `(a, b)` does not imply `(b, a)`.
    pub fn related(&self, subject: &str, object: &str) -> bool {
        self.pairs.contains_key(&(canonical(subject), canonical(object)))
    }

    pub fn len(&self) -> usize {
        self.pairs.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Case-insensitive token-sequence matches of `entity`, leftmost-longest,
/// kept within one sentence.
pub fn find_mentions(tokens: &[String], sent_ids: &[usize], entity: &str) -> Vec<Span> {
    let pattern: Vec<String> = entity.split_whitespace().map(|w| w.to_lowercase()).collect();
    let k = pattern.len();
    let mut out = Vec::new();
    if k == 0 || k > tokens.len() {
        return out;
    }
    let mut i = 0;
    while i + k <= tokens.len() {
        let hit = (0..k).all(|t| tokens[i + t].to_lowercase() == pattern[t])
            && sent_ids.get(i) == sent_ids.get(i + k - 1);
        if hit {
            out.push(Span(i, i + k - 1));
            i += k;
        } else {
            i += 1;
        }
    }
    out
}

/// Candidates that may serve as a `None` object: no KB link with the
/// subject or the answer in either direction.
pub fn none_candidates(rec: &QaRecord, kb: &KbIndex) -> Vec<String> {
    let s = &rec.subject;
    let a = &rec.answer;
    rec.candidates
        .iter()
        .filter(|w| canonical(w) != canonical(a))
        .filter(|w| !(kb.related(s, w) || kb.related(w, s) || kb.related(w, a) || kb.related(a, w)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildOutcome {
    pub instances: Vec<ChainInstance>,
    /// Set when the record produced nothing for a reportable reason.
    pub skipped: Option<String>,
}

fn usable_mentions(doc: &QaDocument) -> Vec<(String, Span)> {
    doc.mentions
        .iter()
        .filter(|m| doc.sent_ids[m.span.start()] == doc.sent_ids[m.span.end()])
        .map(|m| (canonical(&m.text), m.span))
        .collect()
}

fn first_appearance(ms: &[(String, Span)]) -> Vec<String> {
    let mut sorted: Vec<&(String, Span)> = ms.iter().collect();
    sorted.sort_by_key(|(_, s)| *s);
    let mut out: Vec<String> = Vec::new();
    for (name, _) in sorted {
        if !out.contains(name) {
            out.push(name.clone());
        }
    }
    out
}

fn free(span: Span, taken: &[Span]) -> bool {
    !taken.iter().any(|t| t.overlaps(span))
}

/// Chain for the ordered pair `(i, j)` with the given object, if the two
/// documents share an entity.
fn chain_for(rec: &QaRecord, i: usize, j: usize, object: &str, relation: &str) -> Option<ChainInstance> {
    let (d1, d2) = (&rec.documents[i], &rec.documents[j]);
    let subject_mentions = find_mentions(&d1.tokens, &d1.sent_ids, &rec.subject);
    let object_mentions = find_mentions(&d2.tokens, &d2.sent_ids, object);
    if subject_mentions.is_empty() || object_mentions.is_empty() {
        return None;
    }
    let excluded: BTreeSet<String> = core::iter::once(&rec.subject)
        .chain(&rec.candidates)
        .map(|s| canonical(s))
        .collect();
    let m1 = usable_mentions(d1);
    let m2 = usable_mentions(d2);
    let names2: BTreeSet<&String> = m2.iter().map(|(n, _)| n).collect();
    let mut taken1 = subject_mentions.clone();
    let mut taken2 = object_mentions.clone();
    let mut commons = Vec::new();
    for name in first_appearance(&m1) {
        if excluded.contains(&name) || !names2.contains(&name) {
            continue;
        }
        let pick = |ms: &[(String, Span)], taken: &[Span]| -> Vec<Span> {
            let mut v: Vec<Span> = ms
                .iter()
                .filter(|(n, s)| *n == name && free(*s, taken))
                .map(|(_, s)| *s)
                .collect();
            v.sort();
            v.dedup();
            v
        };
        let mentions_1 = pick(&m1, &taken1);
        let mentions_2 = pick(&m2, &taken2);
        if mentions_1.is_empty() || mentions_2.is_empty() {
            continue;
        }
        taken1.extend(&mentions_1);
        taken2.extend(&mentions_2);
        commons.push(CommonEntity {
            name,
            mentions_1,
            mentions_2,
        });
    }
    if commons.is_empty() {
        return None;
    }
    let others = |ms: &[(String, Span)], taken: &mut Vec<Span>| {
        let mut spans: Vec<Span> = ms.iter().map(|(_, s)| *s).collect();
        spans.sort();
        let mut out = Vec::new();
        for s in spans {
            if free(s, taken) {
                taken.push(s);
                out.push(s);
            }
        }
        out
    };
    let other_mentions_1 = others(&m1, &mut taken1);
    let other_mentions_2 = others(&m2, &mut taken2);
    Some(ChainInstance {
        doc1_tokens: d1.tokens.clone(),
        doc2_tokens: d2.tokens.clone(),
        sent_ids_1: d1.sent_ids.clone(),
        sent_ids_2: d2.sent_ids.clone(),
        subject_mentions,
        object_mentions,
        common_entities: commons,
        relation: relation.into(),
        other_mentions_1,
        other_mentions_2,
    })
}

/// All chains of one record, in `(subject document, object document)` order.
/// A pair whose object document holds the answer yields a positive chain;
/// otherwise the first `None` candidate it holds yields a `None` chain.
pub fn build_chains(rec: &QaRecord, kb: &KbIndex) -> Result<BuildOutcome> {
    rec.validate()?;
    let holds = |d: &QaDocument, e: &str| !find_mentions(&d.tokens, &d.sent_ids, e).is_empty();
    let subject_docs: Vec<usize> = (0..rec.documents.len())
        .filter(|&i| holds(&rec.documents[i], &rec.subject))
        .collect();
    if subject_docs.is_empty() {
        return Ok(BuildOutcome {
            instances: Vec::new(),
            skipped: Some(format!("subject {:?} found in no document", rec.subject)),
        });
    }
    let nones = none_candidates(rec, kb);
    let labels = RelationSet::new([rec.relation.as_str()])?;
    let mut instances = Vec::new();
    for &i in &subject_docs {
        for j in 0..rec.documents.len() {
            // two hops need two distinct documents
            if i == j {
                continue;
            }
            let dj = &rec.documents[j];
            let chain = if holds(dj, &rec.answer) {
                chain_for(rec, i, j, &rec.answer, &rec.relation)
            } else {
                nones
                    .iter()
                    .find(|w| holds(dj, w))
                    .and_then(|w| chain_for(rec, i, j, w, NONE_LABEL))
            };
            if let Some(c) = chain {
                c.validate(&labels)?;
                instances.push(c);
            }
        }
    }
    Ok(BuildOutcome {
        instances,
        skipped: None,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MhredSplit {
    pub train: Vec<ChainInstance>,
    pub validation: Vec<ChainInstance>,
    pub test: Vec<ChainInstance>,
}

/// Keeps every positive and an equal-sized seeded sample of `None` chains,
/// in input order.
fn balance(part: Vec<ChainInstance>, rng: &mut ChaCha8Rng) -> Vec<ChainInstance> {
    let positives = part.iter().filter(|c| c.relation != NONE_LABEL).count();
    let none_at: Vec<usize> = (0..part.len()).filter(|&k| part[k].relation == NONE_LABEL).collect();
    if none_at.len() <= positives {
        return part;
    }
    let keep: BTreeSet<usize> = index::sample(rng, none_at.len(), positives)
        .into_iter()
        .map(|k| none_at[k])
        .collect();
    part.into_iter()
        .enumerate()
        .filter(|(k, c)| c.relation != NONE_LABEL || keep.contains(k))
        .map(|(_, c)| c)
        .collect()
}

/// Seeded 90/10 train/validation split of the training source, each part
/// balanced; the test source passes through untouched.
pub fn balance_and_split(
    mut train_source: Vec<ChainInstance>,
    test_source: Vec<ChainInstance>,
    seed: u64,
) -> Result<MhredSplit> {
    if !train_source.iter().any(|c| c.relation != NONE_LABEL) {
        return Err(Error::config("training source has no positive chain"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train_source.shuffle(&mut rng);
    let n_val = train_source.len() / 10;
    let validation = train_source.split_off(train_source.len() - n_val);
    Ok(MhredSplit {
        train: balance(train_source, &mut rng),
        validation: balance(validation, &mut rng),
        test: test_source,
    })
}

/// Counts in the shape of the dataset statistics tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhredStats {
    pub instances: usize,
    pub positives: usize,
    pub nones: usize,
    pub relations: BTreeMap<String, usize>,
    /// Chains by number of common entities; the last bucket is "5 or more".
    pub common_entities: BTreeMap<usize, usize>,
}

pub const COMMON_HISTOGRAM_CAP: usize = 5;

pub fn stats(chains: &[ChainInstance]) -> MhredStats {
    let mut s = MhredStats {
        instances: chains.len(),
        ..MhredStats::default()
    };
    for c in chains {
        if c.relation == NONE_LABEL {
            s.nones += 1;
        } else {
            s.positives += 1;
            *s.relations.entry(c.relation.clone()).or_default() += 1;
        }
        let k = c.common_entities.len().min(COMMON_HISTOGRAM_CAP);
        *s.common_entities.entry(k).or_default() += 1;
    }
    s
}
