//! Sentence-level relation classifier: BiLSTM encoder, convolutional global
//! and entity features, and multi-factor attention weighted by dependency
//! distance to each entity's head token.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{RelationInstance, RelationSet, Span, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{tune_threshold, ScoredPrediction};
use crate::nn::{nll, BiLstm, Conv, Embedding, Fwd, Linear};
use crate::params::{ParamId, ParameterStore};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::train::Trainable;

/// Linear offsets to an entity are clamped to this magnitude.
pub const MAX_POSITION: i64 = 60;
const POSITION_ROWS: usize = 2 * MAX_POSITION as usize + 2;

/// Indicator rows: padding, outside both entities, first entity, second entity.
pub const IND_NONE: usize = 1;
pub const IND_E1: usize = 2;
pub const IND_E2: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Distance-weighted scores divided by their sum.
    Ratio,
    /// Masked softmax over the distance-weighted scores.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every factor's attentive vector is kept.
    Concat,
    /// Factor scores are max pooled into a single attention per entity.
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfaConfig {
    pub word_dim: usize,
    pub indicator_dim: usize,
    pub position_dim: usize,
    /// Per-direction LSTM width; 0 means word_dim + indicator_dim.
    pub hidden: usize,
    pub factors: usize,
    pub window: usize,
    pub global_filters: usize,
    pub entity_filters: usize,
    pub filter_width: usize,
    pub context_radius: usize,
    pub dropout: f64,
    pub distance_factor: bool,
    pub normalization: Normalization,
    pub aggregation: Aggregation,
}

impl Default for MfaConfig {
    fn default() -> Self {
        MfaConfig {
            word_dim: 50,
            indicator_dim: 10,
            position_dim: 5,
            hidden: 0,
            factors: 4,
            window: 5,
            global_filters: 230,
            entity_filters: 230,
            filter_width: 3,
            context_radius: 5,
            dropout: 0.5,
            distance_factor: true,
            normalization: Normalization::Ratio,
            aggregation: Aggregation::Concat,
        }
    }
}

impl MfaConfig {
    pub fn hidden_size(&self) -> usize {
        if self.hidden == 0 {
            self.word_dim + self.indicator_dim
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::config("factors must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::config("window must be at least 1"));
        }
        let dims = [
            ("word_dim", self.word_dim),
            ("indicator_dim", self.indicator_dim),
            ("position_dim", self.position_dim),
            ("global_filters", self.global_filters),
            ("entity_filters", self.entity_filters),
            ("filter_width", self.filter_width),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Width of the classifier input.
    pub fn feature_dim(&self) -> usize {
        let attentive = match self.aggregation {
            Aggregation::Concat => 2 * self.factors,
            Aggregation::MaxPool => 2,
        };
        self.global_filters + 2 * self.entity_filters + attentive * 2 * self.hidden_size()
    }
}

/// Tree distance from every token to `head`.
pub fn dep_distances(n: usize, edges: &[(usize, usize)], head: usize) -> Result<Vec<usize>> {
    if head >= n {
        return Err(Error::validation("head", format!("{head} outside {n} tokens")));
    }
    let mut adj = vec![Vec::new(); n];
    for &(p, c) in edges {
        if p >= n || c >= n {
            return Err(Error::validation("dep_edges", format!("edge ({p}, {c}) out of bounds")));
        }
        adj[p].push(c);
        adj[c].push(p);
    }
    let mut dist = vec![usize::MAX; n];
    dist[head] = 0;
    let mut queue = VecDeque::from([head]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    if dist.contains(&usize::MAX) {
        return Err(Error::validation("dep_edges", "dependency parse is disconnected"));
    }
    Ok(dist)
}

/// Weight of a token at tree distance `l`: halves per step inside the window,
/// floored at `2^-window` beyond it. Distance 0 counts as 1.
pub fn distance_factor(l: usize, window: usize) -> f64 {
    let l = l.max(1);
    if l <= window {
        libm::pow(0.5, (l - 1) as f64)
    } else {
        libm::pow(0.5, window as f64)
    }
}

/// Tokens whose mean distance to the two heads is within the window.
pub fn attention_mask(l1: &[usize], l2: &[usize], window: usize) -> Vec<bool> {
    l1.iter().zip(l2).map(|(a, b)| a + b <= 2 * window).collect()
}

/// Entity-specific attention options.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOptions {
    pub window: usize,
    pub distance_factor: bool,
    pub normalization: Normalization,
}

/// Unnormalized log-scores `h_iᵀ W v_e + ln factor_i` for one slice.
fn attention_logits(
    f: &mut Fwd,
    h: Var,
    v_e: Var,
    slice: Var,
    distances: &[usize],
    opts: AttentionOptions,
) -> Result<Var> {
    let wv = f.tape.matmul(slice, v_e)?;
    let scores = f.tape.matmul(h, wv)?;
    if !opts.distance_factor {
        return Ok(scores);
    }
    let log_factors = Tensor::vector(
        distances
            .iter()
            .map(|&l| libm::log(distance_factor(l, opts.window)))
            .collect(),
    );
    let lf = f.tape.constant(log_factors);
    f.tape.add(scores, lf)
}

fn normalize(f: &mut Fwd, logits: Var, mask: &[bool], n: Normalization) -> Result<Var> {
    match n {
        Normalization::Ratio => f.tape.softmax(logits, Some(mask)),
        Normalization::Softmax => {
            let d = f.tape.exp(logits);
            f.tape.softmax(d, Some(mask))
        }
    }
}

/// Attention distribution of one factor slice over the tokens of `h`.
pub fn attention_weights(
    h: &[Vec<f64>],
    v_e: &[f64],
    distances: &[usize],
    slice: &Tensor,
    mask: &[bool],
    opts: AttentionOptions,
) -> Result<Vec<f64>> {
    if h.len() != distances.len() || h.len() != mask.len() {
        return Err(Error::shape("attention inputs disagree on sentence length"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::domain("every token is masked"));
    }
    let store = ParameterStore::new();
    let mut f = Fwd::eval(&store);
    let hm = f.tape.constant(Tensor::from_rows(h)?);
    let ve = f.tape.vector(v_e.to_vec());
    let w = f.tape.constant(slice.clone());
    let logits = attention_logits(&mut f, hm, ve, w, distances, opts)?;
    let p = normalize(&mut f, logits, mask, opts.normalization)?;
    Ok(f.value(p).data().to_vec())
}

/// Trained or freshly initialized classifier with its vocabulary.
#[derive(Debug, Clone)]
pub struct MfaModel {
    pub cfg: MfaConfig,
    pub relations: RelationSet,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    word: Embedding,
    indicator: Embedding,
    position1: Embedding,
    position2: Embedding,
    encoder: BiLstm,
    global_conv: Conv,
    entity_conv: Conv,
    /// `[factor][entity]` slices of shape `2·hidden x entity_filters`.
    attention: Vec<[ParamId; 2]>,
    classifier: Linear,
}

/// Intermediate values of a forward pass.
pub struct MfaTrace {
    pub probs: Var,
    pub global: Var,
    pub entity: [Var; 2],
    /// `[entity][factor]` attention distributions.
    pub attention: [Vec<Var>; 2],
    pub features: Var,
}

impl MfaModel {
    /// `words` replaces the random word table when given.
    pub fn new(
        cfg: MfaConfig,
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
        let indicator = Embedding::new(&mut store, &mut rng, "indicator", 4, cfg.indicator_dim)?;
        let position1 = Embedding::new(&mut store, &mut rng, "position1", POSITION_ROWS, cfg.position_dim)?;
        let position2 = Embedding::new(&mut store, &mut rng, "position2", POSITION_ROWS, cfg.position_dim)?;
        let x_dim = cfg.word_dim + cfg.indicator_dim;
        let hid = cfg.hidden_size();
        let encoder = BiLstm::new(&mut store, &mut rng, "encoder", x_dim, hid)?;
        let global_conv = Conv::new(
            &mut store,
            &mut rng,
            "global_filters",
            2 * hid + 2 * cfg.position_dim,
            cfg.global_filters,
            cfg.filter_width,
        )?;
        let entity_conv = Conv::new(
            &mut store,
            &mut rng,
            "entity_filters",
            x_dim,
            cfg.entity_filters,
            cfg.filter_width,
        )?;
        let mut attention = Vec::with_capacity(cfg.factors);
        for k in 0..cfg.factors {
            let mut pair = [ParamId(0); 2];
            for (j, slot) in pair.iter_mut().enumerate() {
                *slot = store.add_uniform(
                    &mut rng,
                    &format!("attention.e{}.f{k}", j + 1),
                    2 * hid,
                    cfg.entity_filters,
                )?;
            }
            attention.push(pair);
        }
        let classifier = Linear::new(
            &mut store,
            &mut rng,
            "classifier",
            cfg.feature_dim(),
            relations.class_count(),
        )?;
        Ok(MfaModel {
            cfg,
            relations,
            vocab,
            store,
            word,
            indicator,
            position1,
            position2,
            encoder,
            global_conv,
            entity_conv,
            attention,
            classifier,
        })
    }

    pub fn attention_slice(&self, factor: usize, entity: usize) -> &Tensor {
        self.store.value(self.attention[factor][entity])
    }

    pub fn attention_options(&self) -> AttentionOptions {
        AttentionOptions {
            window: self.cfg.window,
            distance_factor: self.cfg.distance_factor,
            normalization: self.cfg.normalization,
        }
    }

    fn position_index(i: usize, start: usize) -> usize {
        let d = (i as i64 - start as i64).clamp(-MAX_POSITION, MAX_POSITION);
        (d + MAX_POSITION + 1) as usize
    }

    /// Inclusive context window around an entity, clamped to the sentence.
    pub fn context_range(&self, span: Span, n: usize) -> core::ops::Range<usize> {
        let r = self.cfg.context_radius;
        span.start().saturating_sub(r)..(span.end() + r + 1).min(n)
    }

    /// Word ∥ indicator vectors.
    fn inputs(&self, f: &mut Fwd, inst: &RelationInstance) -> Result<Vec<Var>> {
        let mut xs = Vec::with_capacity(inst.tokens.len());
        for (i, tok) in inst.tokens.iter().enumerate() {
            let ind = if inst.e1_span.contains(i) {
                IND_E1
            } else if inst.e2_span.contains(i) {
                IND_E2
            } else {
                IND_NONE
            };
            let w = self.word.lookup(f, self.vocab.get(tok))?;
            let z = self.indicator.lookup(f, ind)?;
            let x = f.tape.concat(&[w, z])?;
            xs.push(f.dropout(x, self.cfg.dropout));
        }
        Ok(xs)
    }

    pub fn trace(&self, f: &mut Fwd, inst: &RelationInstance) -> Result<MfaTrace> {
        let n = inst.tokens.len();
        let xs = self.inputs(f, inst)?;
        let hs = self.encoder.encode(f, &xs)?;

        let mut qs = Vec::with_capacity(n);
        for (i, &h) in hs.iter().enumerate() {
            let u1 = self.position1.lookup(f, Self::position_index(i, inst.e1_span.start()))?;
            let u2 = self.position2.lookup(f, Self::position_index(i, inst.e2_span.start()))?;
            qs.push(f.tape.concat(&[h, u1, u2])?);
        }
        let g = self.global_conv.max_pool(f, &qs, 0..n)?;
        let global = f.tape.tanh(g);

        let mut entity = [global; 2];
        for (j, span) in [inst.e1_span, inst.e2_span].into_iter().enumerate() {
            let e = self.entity_conv.max_pool(f, &xs, self.context_range(span, n))?;
            entity[j] = f.tape.tanh(e);
        }

        let l1 = dep_distances(n, &inst.dep_edges, inst.e1_span.end())?;
        let l2 = dep_distances(n, &inst.dep_edges, inst.e2_span.end())?;
        let mut mask = attention_mask(&l1, &l2, self.cfg.window);
        if !mask.contains(&true) {
            // heads further apart than twice the window: attend everywhere
            mask.fill(true);
        }
        let opts = self.attention_options();
        let h = f.tape.stack_rows(&hs)?;
        let mut attention: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        let mut attentive = [Vec::new(), Vec::new()];
        for (j, dist) in [&l1, &l2].into_iter().enumerate() {
            let mut logits = Vec::with_capacity(self.cfg.factors);
            for pair in &self.attention {
                let w = f.p(pair[j]);
                logits.push(attention_logits(f, h, entity[j], w, dist, opts)?);
            }
            let pooled = match self.cfg.aggregation {
                Aggregation::Concat => logits,
                Aggregation::MaxPool => vec![f.tape.max_of(&logits)?],
            };
            for lg in pooled {
                let p = normalize(f, lg, &mask, opts.normalization)?;
                attention[j].push(p);
                attentive[j].push(f.tape.weighted_rows(h, p)?);
            }
        }
        let mut parts = vec![global];
        parts.extend(attentive[0].iter().chain(&attentive[1]).copied());
        parts.extend(entity);
        let feats = f.tape.concat(&parts)?;
        let features = f.dropout(feats, self.cfg.dropout);
        let logits = self.classifier.forward(f, features)?;
        let probs = f.tape.softmax(logits, None)?;
        Ok(MfaTrace {
            probs,
            global,
            entity,
            attention,
            features: feats,
        })
    }

    /// Class distribution with `None` at index 0.
    pub fn forward(&self, inst: &RelationInstance) -> Result<Vec<f64>> {
        let mut f = Fwd::eval(&self.store);
        let t = self.trace(&mut f, inst)?;
        Ok(f.value(t.probs).data().to_vec())
    }

    /// Entity feature vector of entity `which` (1 or 2).
    pub fn entity_vector(&self, inst: &RelationInstance, which: usize) -> Result<Vec<f64>> {
        if !(1..=2).contains(&which) {
            return Err(Error::domain("entity must be 1 or 2"));
        }
        let mut f = Fwd::eval(&self.store);
        let t = self.trace(&mut f, inst)?;
        Ok(f.value(t.entity[which - 1]).data().to_vec())
    }

    /// Most probable label and its probability.
    pub fn predict(&self, inst: &RelationInstance) -> Result<(String, f64)> {
        let p = self.forward(inst)?;
        let best = crate::nn::argmax(&p);
        Ok((self.relations.class_label(best).into(), p[best]))
    }

    pub fn score(&self, data: &[RelationInstance]) -> Result<Vec<ScoredPrediction>> {
        data.iter()
            .map(|inst| {
                let (predicted, confidence) = self.predict(inst)?;
                Ok(ScoredPrediction {
                    predicted,
                    confidence,
                    gold: inst.relation.clone(),
                })
            })
            .collect()
    }

    /// Mean negative log likelihood of the gold labels.
    pub fn loss(&self, batch: &[RelationInstance]) -> Result<f64> {
        let refs: Vec<&RelationInstance> = batch.iter().collect();
        crate::train::eval_loss(self, &refs)
    }
}

impl Trainable for MfaModel {
    type Instance = RelationInstance;

    fn params(&self) -> &ParameterStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn loss(&self, f: &mut Fwd, inst: &RelationInstance) -> Result<(Var, usize)> {
        let gold = self
            .relations
            .class_index(&inst.relation)
            .ok_or_else(|| Error::validation("relation", format!("unknown relation {:?}", inst.relation)))?;
        let t = self.trace(f, inst)?;
        Ok((nll(f, t.probs, gold)?, 1))
    }

    /// Best F1 over confidence thresholds.
    fn evaluate(&self, data: &[RelationInstance]) -> Result<f64> {
        let scored = self.score(data)?;
        Ok(tune_threshold(&scored).map(|(_, r)| r.f1).unwrap_or(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize_ws;
    use crate::train::gradient_check;
    use rand::Rng;

    fn tiny_cfg() -> MfaConfig {
        MfaConfig {
            word_dim: 4,
            indicator_dim: 2,
            position_dim: 2,
            hidden: 3,
            factors: 2,
            window: 2,
            global_filters: 3,
            entity_filters: 3,
            filter_width: 3,
            context_radius: 1,
            dropout: 0.0,
            ..MfaConfig::default()
        }
    }

    fn inst() -> RelationInstance {
        RelationInstance {
            tokens: tokenize_ws("Obama was born in sunny Hawaii ."),
            e1_span: Span(0, 0),
            e2_span: Span(5, 5),
            relation: "born_in".into(),
            dep_edges: vec![(2, 0), (2, 1), (2, 3), (3, 5), (5, 4), (2, 6)],
        }
    }

    fn model(cfg: MfaConfig) -> MfaModel {
        let rels = RelationSet::new(["born_in", "lives_in"]).unwrap();
        let i = inst();
        let vocab = Vocabulary::build(&rels, i.tokens.iter().map(String::as_str), 1);
        MfaModel::new(cfg, rels, vocab, None, 5).unwrap()
    }

    /// Breadth-first search written independently over an edge list.
    fn bfs_oracle(n: usize, edges: &[(usize, usize)], head: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; n];
        dist[head] = 0;
        let mut frontier = vec![head];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for &(a, b) in edges {
                    let v = if a == u { b } else if b == u { a } else { continue };
                    if dist[v] == usize::MAX {
                        dist[v] = d;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    #[test]
    fn distances_follow_the_tree() {
        let i = inst();
        let d = dep_distances(7, &i.dep_edges, 2).unwrap();
        assert_eq!(d[2], 0);
        assert_eq!(d[0], 1);
        assert_eq!(d[4], 3);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let edges: Vec<(usize, usize)> = (1..8).map(|c| (r.random_range(0..c), c)).collect();
            for head in 0..8 {
                assert_eq!(dep_distances(8, &edges, head).unwrap(), bfs_oracle(8, &edges, head));
            }
        }
        assert!(dep_distances(3, &[(0, 1)], 0).is_err());
    }

    #[test]
    fn factor_values() {
        assert_eq!(distance_factor(1, 5), 1.0);
        assert_eq!(distance_factor(0, 5), 1.0);
        assert_eq!(distance_factor(3, 5), 0.25);
        assert_eq!(distance_factor(7, 5), 1.0 / 32.0);
    }

    fn opts() -> AttentionOptions {
        AttentionOptions {
            window: 5,
            distance_factor: true,
            normalization: Normalization::Ratio,
        }
    }

    #[test]
    fn uniform_scores_give_uniform_attention() {
        let h = vec![vec![0.0, 0.0]; 4];
        let slice = Tensor::zeros(2, 3);
        let p = attention_weights(&h, &[1.0, 2.0, 3.0], &[1; 4], &slice, &[true, true, false, true], opts()).unwrap();
        for (i, v) in p.iter().enumerate() {
            let expect = if i == 2 { 0.0 } else { 1.0 / 3.0 };
            assert!((v - expect).abs() < 1e-12);
        }
        assert!(attention_weights(&h, &[1.0; 3], &[1; 4], &slice, &[false; 4], opts()).is_err());
    }

    #[test]
    fn attention_matches_direct_formula() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let h: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ve: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let slice = Tensor::from_vec(4, 3, (0..12).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let dist = [0, 1, 2, 3, 6, 9];
        let mask = [true, true, true, true, true, false];
        let p = attention_weights(&h, &ve, &dist, &slice, &mask, opts()).unwrap();
        let mut d = Vec::new();
        for i in 0..6 {
            let mut score = 0.0;
            for a in 0..4 {
                for b in 0..3 {
                    score += h[i][a] * slice[(a, b)] * ve[b];
                }
            }
            let l = dist[i];
            let w = if (1..=5).contains(&l) {
                1.0 / libm::pow(2.0, (l - 1) as f64)
            } else if l == 0 {
                1.0
            } else {
                1.0 / 32.0
            };
            d.push(if mask[i] { libm::exp(score) * w } else { 0.0 });
        }
        let z: f64 = d.iter().sum();
        for i in 0..6 {
            assert!((p[i] - d[i] / z).abs() < 1e-10);
        }
    }

    #[test]
    fn output_is_a_distribution_and_zero_model_is_uniform() {
        let m = model(tiny_cfg());
        let p = m.forward(&inst()).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let mut z = model(tiny_cfg());
        for p in z.store.iter_mut() {
            p.value.fill(0.0);
        }
        let p = z.forward(&inst()).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let loss = z.loss(&[inst()]).unwrap();
        assert!((loss - libm::log(3.0)).abs() < 1e-12);
    }

    #[test]
    fn classifier_width_follows_factor_count() {
        for m in 1..=3 {
            let cfg = MfaConfig { factors: m, ..tiny_cfg() };
            let model = model(cfg.clone());
            let mut f = Fwd::eval(&model.store);
            let t = model.trace(&mut f, &inst()).unwrap();
            assert_eq!(f.value(t.features).len(), 3 + 2 * 3 + 4 * m * 3);
            assert_eq!(cfg.feature_dim(), 3 + 2 * 3 + 4 * m * 3);
        }
        let pooled = MfaConfig { aggregation: Aggregation::MaxPool, ..tiny_cfg() };
        assert_eq!(pooled.feature_dim(), 3 + 2 * 3 + 4 * 3);
    }

    #[test]
    fn entity_context_clamps() {
        let m = model(MfaConfig { context_radius: 5, ..tiny_cfg() });
        assert_eq!(m.context_range(Span(0, 0), 7), 0..6);
        assert_eq!(m.context_range(Span(5, 5), 7), 0..7);
        assert_eq!(m.entity_vector(&inst(), 1).unwrap(), m.entity_vector(&inst(), 1).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (distance, norm, agg) in [
            (true, Normalization::Ratio, Aggregation::Concat),
            (false, Normalization::Softmax, Aggregation::MaxPool),
        ] {
            let mut m = model(MfaConfig {
                distance_factor: distance,
                normalization: norm,
                aggregation: agg,
                ..tiny_cfg()
            });
            m.store.randomize(&mut ChaCha8Rng::seed_from_u64(4), 1.0);
            let r = gradient_check(&mut m, &inst(), 1e-3, 1).unwrap();
            assert!(r.max_relative_error < 1e-4, "{r:?}");
            assert!(r.checked >= 200);
        }
    }
}
