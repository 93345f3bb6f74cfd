//! Two-document chain classifier: BiLSTM over both documents, a graph
//! convolution over each document's mention graph, then one over the unified
//! entity graph, and a softmax over the subject and object entity vectors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{canonical, span_text, ChainInstance, RelationSet, Span, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{tune_threshold, ScoredPrediction};
use crate::graph::{
    build_entity_graph, build_mention_graph, gcn_layer, unify_entity_graphs, EdgeFilter, EdgeKind,
    GraphTopology, Mention,
};
use crate::nn::{nll, BiLstm, Embedding, Fwd, Linear};
use crate::params::{ParamId, ParameterStore};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::train::Trainable;

pub const IND_PLAIN: usize = 1;
pub const IND_SUBJECT: usize = 2;
pub const IND_OBJECT: usize = 3;
pub const IND_FIRST_COMMON: usize = 4;
/// Distinct common entities with their own indicator row.
pub const MAX_COMMON_ENTITIES: usize = 16;
const INDICATOR_ROWS: usize = IND_FIRST_COMMON + MAX_COMMON_ENTITIES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HegcnConfig {
    pub word_dim: usize,
    pub indicator_dim: usize,
    pub mention_layers: usize,
    pub entity_layers: usize,
    pub dropout: f64,
    pub mention_gcn: bool,
    pub entity_gcn: bool,
    /// Off: mention context is the plain sentence mean.
    pub attention: bool,
    pub disabled_edges: Vec<EdgeKind>,
}

impl Default for HegcnConfig {
    fn default() -> Self {
        HegcnConfig {
            word_dim: 300,
            indicator_dim: 20,
            mention_layers: 1,
            entity_layers: 1,
            dropout: 0.5,
            mention_gcn: true,
            entity_gcn: true,
            attention: true,
            disabled_edges: Vec::new(),
        }
    }
}

impl HegcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.indicator_dim == 0 {
            return Err(Error::config("embedding sizes must be positive"));
        }
        if self.mention_gcn && self.mention_layers == 0 {
            return Err(Error::config("mention_layers must be positive while mention_gcn is on"));
        }
        if self.entity_gcn && self.entity_layers == 0 {
            return Err(Error::config("entity_layers must be positive while entity_gcn is on"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Hidden size of one encoder direction.
    pub fn direction_dim(&self) -> usize {
        self.word_dim + self.indicator_dim
    }

    /// Width of every mention and entity node vector.
    pub fn node_dim(&self) -> usize {
        6 * self.direction_dim()
    }

    pub fn edge_filter(&self) -> EdgeFilter {
        EdgeFilter {
            disabled: self.disabled_edges.iter().copied().collect(),
        }
    }
}

/// Per-token indicator rows for `doc1 <doc> doc2`.
pub fn indicator_indices(chain: &ChainInstance) -> Result<Vec<usize>> {
    if chain.common_entities.len() > MAX_COMMON_ENTITIES {
        return Err(Error::config(format!(
            "{} common entities exceed the indicator cap of {MAX_COMMON_ENTITIES}",
            chain.common_entities.len()
        )));
    }
    let n1 = chain.doc1_tokens.len();
    let mut ind = vec![IND_PLAIN; n1 + 1 + chain.doc2_tokens.len()];
    let mut mark = |doc: usize, spans: &[Span], value: usize| -> Result<()> {
        let (n, offset) = if doc == 0 {
            (n1, 0)
        } else {
            (chain.doc2_tokens.len(), n1 + 1)
        };
        for &s in spans {
            s.check(n, "mentions")?;
            for i in s.tokens() {
                ind[offset + i] = value;
            }
        }
        Ok(())
    };
    for (k, c) in chain.common_entities.iter().enumerate() {
        mark(0, &c.mentions_1, IND_FIRST_COMMON + k)?;
        mark(1, &c.mentions_2, IND_FIRST_COMMON + k)?;
    }
    mark(1, &chain.object_mentions, IND_OBJECT)?;
    mark(0, &chain.subject_mentions, IND_SUBJECT)?;
    Ok(ind)
}

/// Mentions of both documents, subject or object first, then commons, then
/// the rest. Each carries the canonical string of the entity it names.
pub fn chain_mentions(chain: &ChainInstance) -> [Vec<Mention>; 2] {
    let subject = canonical(&chain.subject_text());
    let object = canonical(&chain.object_text());
    let mut out = [Vec::new(), Vec::new()];
    let mut push = |doc: usize, span: Span, name: &str| {
        if !out[doc].iter().any(|m: &Mention| m.span == span) {
            out[doc].push(Mention {
                span,
                name: name.into(),
            });
        }
    };
    for &s in &chain.subject_mentions {
        push(0, s, &subject);
    }
    for &s in &chain.object_mentions {
        push(1, s, &object);
    }
    for c in &chain.common_entities {
        let name = canonical(&c.name);
        for &s in &c.mentions_1 {
            push(0, s, &name);
        }
        for &s in &c.mentions_2 {
            push(1, s, &name);
        }
    }
    for &s in &chain.other_mentions_1 {
        push(0, s, &canonical(&span_text(&chain.doc1_tokens, s)));
    }
    for &s in &chain.other_mentions_2 {
        push(1, s, &canonical(&span_text(&chain.doc2_tokens, s)));
    }
    out
}

/// All graphs of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGraphs {
    pub mention: [GraphTopology; 2],
    pub entity: [GraphTopology; 2],
    pub unified: GraphTopology,
    /// Unified index of each second-document entity node.
    pub placed: Vec<usize>,
    pub subject: usize,
    pub object: usize,
}

pub fn chain_graphs(chain: &ChainInstance, filter: &EdgeFilter) -> Result<ChainGraphs> {
    let ms = chain_mentions(chain);
    let sents = [&chain.sent_ids_1, &chain.sent_ids_2];
    let mention = [
        build_mention_graph(sents[0], &ms[0], 0, filter)?,
        build_mention_graph(sents[1], &ms[1], 1, filter)?,
    ];
    let entity = [
        build_entity_graph(sents[0], &ms[0], 0, filter)?,
        build_entity_graph(sents[1], &ms[1], 1, filter)?,
    ];
    let commons: Vec<String> = chain.common_entities.iter().map(|c| canonical(&c.name)).collect();
    let (unified, placed) = unify_entity_graphs(&entity[0], &entity[1], &commons)?;
    let subject = entity[0]
        .node_index(&canonical(&chain.subject_text()))
        .ok_or_else(|| Error::validation("subject_mentions", "subject missing from its graph"))?;
    let object = entity[1]
        .node_index(&canonical(&chain.object_text()))
        .map(|i| placed[i])
        .ok_or_else(|| Error::validation("object_mentions", "object missing from its graph"))?;
    Ok(ChainGraphs {
        mention,
        entity,
        unified,
        placed,
        subject,
        object,
    })
}

/// Token range of the sentence holding `span`.
pub fn sentence_range(sent_ids: &[usize], span: Span) -> Range<usize> {
    let s = sent_ids[span.start()];
    let start = sent_ids.iter().position(|&x| x == s).unwrap_or(span.start());
    let end = sent_ids.iter().rposition(|&x| x == s).map_or(span.end() + 1, |e| e + 1);
    start..end
}

/// `p = h_b ∥ h_e`, context `c` over the sentence, result `p ∥ c`.
/// Without `w` the context is the sentence mean.
pub fn mention_node_init(
    f: &mut Fwd,
    hs: &[Var],
    span: Span,
    sentence: Range<usize>,
    w: Option<Var>,
) -> Result<Var> {
    if sentence.is_empty() {
        return Err(Error::domain("mention sentence is empty"));
    }
    span.check(hs.len(), "mention")?;
    if sentence.end > hs.len() {
        return Err(Error::domain("sentence range outside the document"));
    }
    let p = f.tape.concat(&[hs[span.start()], hs[span.end()]])?;
    let c = match w {
        Some(w) => {
            let h = f.tape.stack_rows(&hs[sentence])?;
            let pt = f.tape.transpose(p);
            let pw = f.tape.matmul(pt, w)?;
            let u = f.tape.tanh(pw);
            let ut = f.tape.transpose(u);
            let scores = f.tape.matmul(h, ut)?;
            let a = f.tape.softmax(scores, None)?;
            f.tape.weighted_rows(h, a)?
        }
        None => f.tape.mean(&hs[sentence])?,
    };
    f.tape.concat(&[p, c])
}

#[derive(Debug, Clone)]
pub struct HegcnModel {
    pub cfg: HegcnConfig,
    pub relations: RelationSet,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    word: Embedding,
    indicator: Embedding,
    encoder: BiLstm,
    mention_attention: ParamId,
    mention_gcn: Vec<ParamId>,
    entity_gcn: Vec<ParamId>,
    classifier: Linear,
}

pub struct HegcnTrace {
    pub probs: Var,
    pub mention_nodes: [Var; 2],
    pub entity_nodes: Var,
    pub graphs: ChainGraphs,
}

impl HegcnModel {
    pub fn new(
        cfg: HegcnConfig,
        relations: RelationSet,
        vocab: Vocabulary,
        words: Option<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let word = match words {
            Some(t) => {
                if t.shape() != (vocab.len(), cfg.word_dim) {
                    return Err(Error::config(format!(
                        "word table {:?} does not match vocabulary {} x word_dim {}",
                        t.shape(),
                        vocab.len(),
                        cfg.word_dim
                    )));
                }
                Embedding::from_tensor(&mut store, "word", t, true)?
            }
            None => Embedding::new(&mut store, &mut rng, "word", vocab.len(), cfg.word_dim)?,
        };
        let indicator = Embedding::new(&mut store, &mut rng, "indicator", INDICATOR_ROWS, cfg.indicator_dim)?;
        let hd = cfg.direction_dim();
        let encoder = BiLstm::new(&mut store, &mut rng, "encoder", cfg.word_dim + cfg.indicator_dim, hd)?;
        let mention_attention = store.add_uniform(&mut rng, "mention_attention", 4 * hd, 2 * hd)?;
        let d = cfg.node_dim();
        let mut mention_gcn = Vec::new();
        if cfg.mention_gcn {
            for l in 0..cfg.mention_layers {
                mention_gcn.push(store.add_uniform(&mut rng, &format!("mention_gcn.{l}"), d, d)?);
            }
        }
        let mut entity_gcn = Vec::new();
        if cfg.entity_gcn {
            for l in 0..cfg.entity_layers {
                entity_gcn.push(store.add_uniform(&mut rng, &format!("entity_gcn.{l}"), d, d)?);
            }
        }
        let classifier = Linear::new(&mut store, &mut rng, "classifier", 2 * d, relations.class_count())?;
        Ok(HegcnModel {
            cfg,
            relations,
            vocab,
            store,
            word,
            indicator,
            encoder,
            mention_attention,
            mention_gcn,
            entity_gcn,
            classifier,
        })
    }

    fn gcn_stack(f: &mut Fwd, layers: &[ParamId], adjacency: &Tensor, g: Var) -> Result<Var> {
        let a = f.tape.constant(adjacency.clone());
        let mut g = g;
        for &id in layers {
            let w = f.p(id);
            g = gcn_layer(f, a, g, w)?;
        }
        Ok(g)
    }

    pub fn trace(&self, f: &mut Fwd, chain: &ChainInstance) -> Result<HegcnTrace> {
        let graphs = chain_graphs(chain, &self.cfg.edge_filter())?;
        let ind = indicator_indices(chain)?;
        let n1 = chain.doc1_tokens.len();
        let mut xs = Vec::with_capacity(ind.len());
        for (i, &z) in ind.iter().enumerate() {
            let tok = if i < n1 {
                self.vocab.get(&chain.doc1_tokens[i])
            } else if i == n1 {
                Vocabulary::DOC_SEP
            } else {
                self.vocab.get(&chain.doc2_tokens[i - n1 - 1])
            };
            let w = self.word.lookup(f, tok)?;
            let z = self.indicator.lookup(f, z)?;
            let x = f.tape.concat(&[w, z])?;
            xs.push(f.dropout(x, self.cfg.dropout));
        }
        let hs = self.encoder.encode(f, &xs)?;
        let docs = [&hs[..n1], &hs[n1 + 1..]];
        let sents = [&chain.sent_ids_1, &chain.sent_ids_2];

        let attention = self.cfg.attention.then(|| f.p(self.mention_attention));
        let mut mention_nodes = Vec::with_capacity(2);
        for d in 0..2 {
            let g = &graphs.mention[d];
            let mut qs = Vec::with_capacity(g.len());
            for node in &g.nodes {
                let span = node.span.ok_or_else(|| Error::domain("mention node without span"))?;
                let range = sentence_range(sents[d], span);
                qs.push(mention_node_init(f, docs[d], span, range, attention)?);
            }
            let q = f.tape.stack_rows(&qs)?;
            mention_nodes.push(Self::gcn_stack(f, &self.mention_gcn, &g.adjacency, q)?);
        }
        let mention_nodes = [mention_nodes[0], mention_nodes[1]];

        // entity inputs average the mention outputs sharing the name
        let mut members: Vec<Vec<Var>> = vec![Vec::new(); graphs.unified.len()];
        for d in 0..2 {
            let ent = &graphs.entity[d];
            for (k, node) in graphs.mention[d].nodes.iter().enumerate() {
                let e = ent
                    .node_index(&node.name)
                    .ok_or_else(|| Error::domain("mention without entity node"))?;
                let u = if d == 0 { e } else { graphs.placed[e] };
                let row = f.tape.row(mention_nodes[d], k)?;
                members[u].push(row);
            }
        }
        let mut init = Vec::with_capacity(members.len());
        for m in &members {
            init.push(f.tape.mean(m)?);
        }
        let g0 = f.tape.stack_rows(&init)?;
        let entity_nodes = Self::gcn_stack(f, &self.entity_gcn, &graphs.unified.adjacency, g0)?;

        let es = f.tape.row(entity_nodes, graphs.subject)?;
        let eo = f.tape.row(entity_nodes, graphs.object)?;
        let feats = f.tape.concat(&[es, eo])?;
        let feats = f.dropout(feats, self.cfg.dropout);
        let logits = self.classifier.forward(f, feats)?;
        let probs = f.tape.softmax(logits, None)?;
        Ok(HegcnTrace {
            probs,
            mention_nodes,
            entity_nodes,
            graphs,
        })
    }

    /// Class distribution with `None` at index 0.
    pub fn forward(&self, chain: &ChainInstance) -> Result<Vec<f64>> {
        let mut f = Fwd::eval(&self.store);
        let t = self.trace(&mut f, chain)?;
        Ok(f.value(t.probs).data().to_vec())
    }

    pub fn predict(&self, chain: &ChainInstance) -> Result<(String, f64)> {
        let p = self.forward(chain)?;
        let best = crate::nn::argmax(&p);
        Ok((self.relations.class_label(best).into(), p[best]))
    }

    pub fn score(&self, data: &[ChainInstance]) -> Result<Vec<ScoredPrediction>> {
        data.iter()
            .map(|c| {
                let (predicted, confidence) = self.predict(c)?;
                Ok(ScoredPrediction {
                    predicted,
                    confidence,
                    gold: c.relation.clone(),
                })
            })
            .collect()
    }
}

impl Trainable for HegcnModel {
    type Instance = ChainInstance;

    fn params(&self) -> &ParameterStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn loss(&self, f: &mut Fwd, chain: &ChainInstance) -> Result<(Var, usize)> {
        let gold = self
            .relations
            .class_index(&chain.relation)
            .ok_or_else(|| Error::validation("relation", format!("unknown relation {:?}", chain.relation)))?;
        let t = self.trace(f, chain)?;
        Ok((nll(f, t.probs, gold)?, 1))
    }

    /// Best F1 over confidence thresholds.
    fn evaluate(&self, data: &[ChainInstance]) -> Result<f64> {
        let scored = self.score(data)?;
        Ok(tune_threshold(&scored).map(|(_, r)| r.f1).unwrap_or(0.0))
    }
}
