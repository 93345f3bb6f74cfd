//! Word-level joint extraction: tuples are written as a token sequence over
//! a vocabulary shared with the encoder and generated one word at a time.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{span_text, CharVocab, JointInstance, RelationSet, TupleStrings, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::tuple_set_prf;
use crate::joint::{EncoderDims, JointEncoder};
use crate::nn::{argmax, nll, Fwd, Linear, LstmCell};
use crate::params::{ParamId, ParameterStore};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::train::Trainable;

pub const FIELD_SEP: &str = ";";
pub const TUPLE_SEP: &str = "|";

/// Largest n-gram order of the n-gram attention.
pub const NGRAM_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WdecAttention {
    /// Mean of the encoder states.
    Avg,
    /// Last encoder state attending over uni-, bi- and trigram averages.
    Ngram,
    /// Additive attention driven by the previous decoder state.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WdecConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_features: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub attention: WdecAttention,
    pub masking: bool,
    pub unk_replacement: bool,
    pub max_steps: usize,
}

impl Default for WdecConfig {
    fn default() -> Self {
        WdecConfig {
            word_dim: 300,
            char_dim: 50,
            char_features: 50,
            hidden: 300,
            dropout: 0.3,
            attention: WdecAttention::Single,
            masking: true,
            unk_replacement: true,
            max_steps: 50,
        }
    }
}

impl WdecConfig {
    pub fn encoder_dims(&self) -> EncoderDims {
        EncoderDims {
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_features: self.char_features,
            hidden: self.hidden,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_dims().validate()?;
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Renders the tuples as `e1 ; e2 ; relation` joined by `|`, in record order.
/// Entities containing a separator token cannot be written and are rejected.
pub fn linearize(inst: &JointInstance) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (k, t) in inst.tuples.iter().enumerate() {
        if k > 0 {
            out.push(TUPLE_SEP.to_string());
        }
        for span in [t.e1_span, t.e2_span] {
            let toks = inst
                .tokens
                .get(span.tokens())
                .ok_or_else(|| Error::validation("tuples", "entity span outside the sentence"))?;
            if toks.iter().any(|w| w == FIELD_SEP || w == TUPLE_SEP) {
                return Err(Error::validation(
                    "tuples",
                    format!("entity {:?} contains a separator token", span_text(&inst.tokens, span)),
                ));
            }
            out.extend(toks.iter().cloned());
            out.push(FIELD_SEP.to_string());
        }
        out.push(t.relation.clone());
    }
    Ok(out)
}

/// Tuples recovered from a generated sequence, with a count per rejection reason.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTuples {
    pub tuples: BTreeSet<TupleStrings>,
    /// Fragments without exactly three nonempty components.
    pub malformed: usize,
    pub unknown_relation: usize,
    pub same_entity: usize,
    pub duplicate: usize,
}

/// Inverse of [`linearize`]; total on any token sequence.
pub fn parse_decoded(seq: &[String], relations: &RelationSet) -> ParsedTuples {
    let mut out = ParsedTuples::default();
    if seq.is_empty() {
        return out;
    }
    for fragment in seq.split(|t| t == TUPLE_SEP) {
        let parts: Vec<&[String]> = fragment.split(|t| t == FIELD_SEP).collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            out.malformed += 1;
            continue;
        }
        let e1 = parts[0].join(" ");
        let e2 = parts[1].join(" ");
        let rel = parts[2].join(" ");
        if !relations.contains(&rel) {
            out.unknown_relation += 1;
        } else if e1 == e2 {
            out.same_entity += 1;
        } else if !out.tuples.insert((e1, e2, rel)) {
            out.duplicate += 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
enum AttentionParams {
    Avg,
    Ngram {
        score: [ParamId; NGRAM_ORDER],
        project: [ParamId; NGRAM_ORDER],
    },
    Single {
        source: ParamId,
        query: ParamId,
        query_bias: ParamId,
        vector: ParamId,
    },
}

/// Encoder-side values reused at every decoding step.
struct Source {
    hs: Vec<Var>,
    /// `n x hidden`
    rows: Var,
    /// Projected encoder rows for additive attention.
    keys: Option<Var>,
    /// Step-independent context and its unigram attention.
    fixed: Option<(Var, Option<Var>)>,
}

/// Result of greedy generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Generated tokens before EOS, with UNK replaced where enabled.
    pub tokens: Vec<String>,
    /// Raw vocabulary indices, EOS included when produced.
    pub ids: Vec<usize>,
    /// Attention over source positions at each step, when the mode has one.
    pub attention: Vec<Vec<f64>>,
    /// Output distribution at each step, if requested.
    pub distributions: Vec<Vec<f64>>,
    /// Generation stopped at the step limit without EOS.
    pub truncated: bool,
}

/// One decoder step evaluated after a teacher-forced prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub probs: Vec<f64>,
    pub attention: Option<Vec<f64>>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WdecModel {
    pub cfg: WdecConfig,
    pub relations: RelationSet,
    pub vocab: Vocabulary,
    pub chars: CharVocab,
    pub store: ParameterStore,
    encoder: JointEncoder,
    decoder: LstmCell,
    projection: Linear,
    attention: AttentionParams,
}

impl WdecModel {
    pub fn new(
        cfg: WdecConfig,
        relations: RelationSet,
        vocab: Vocabulary,
        chars: CharVocab,
        words: Option<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if vocab.relation_count() != relations.len() {
            return Err(Error::config("vocabulary was built for a different relation set"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let encoder = JointEncoder::new(&mut store, &mut rng, cfg.encoder_dims(), &vocab, &chars, words)?;
        let h = cfg.hidden;
        let (attention, context_dim) = match cfg.attention {
            WdecAttention::Avg => (AttentionParams::Avg, h),
            WdecAttention::Ngram => {
                let mut score = [ParamId(0); NGRAM_ORDER];
                let mut project = [ParamId(0); NGRAM_ORDER];
                for g in 0..NGRAM_ORDER {
                    score[g] = store.add_uniform(&mut rng, &format!("attention.score{}", g + 1), h, h)?;
                    project[g] = store.add_uniform(&mut rng, &format!("attention.project{}", g + 1), h, h)?;
                }
                (AttentionParams::Ngram { score, project }, 2 * h)
            }
            WdecAttention::Single => (
                AttentionParams::Single {
                    source: store.add_uniform(&mut rng, "attention.source", h, h)?,
                    query: store.add_uniform(&mut rng, "attention.query", h, h)?,
                    query_bias: store.add_zeros("attention.query_bias", h, 1)?,
                    vector: store.add_uniform(&mut rng, "attention.vector", h, 1)?,
                },
                h,
            ),
        };
        let decoder = LstmCell::new(&mut store, &mut rng, "decoder", context_dim + cfg.word_dim, h)?;
        let projection = Linear::new(&mut store, &mut rng, "projection", h, vocab.len())?;
        Ok(WdecModel {
            cfg,
            relations,
            vocab,
            chars,
            store,
            encoder,
            decoder,
            projection,
            attention,
        })
    }

    /// Vocabulary entries the decoder may emit for this sentence.
    pub fn allowed_mask(&self, tokens: &[String]) -> Vec<bool> {
        let mut mask = vec![!self.cfg.masking; self.vocab.len()];
        for i in [Vocabulary::UNK, Vocabulary::EOS, Vocabulary::FIELD_SEP, Vocabulary::TUPLE_SEP] {
            mask[i] = true;
        }
        for k in 0..self.relations.len() {
            mask[self.vocab.relation_index(k)] = true;
        }
        for t in tokens {
            mask[self.vocab.get(t)] = true;
        }
        mask
    }

    /// Gold output indices: the linearized tuples followed by EOS.
    pub fn target_ids(&self, inst: &JointInstance) -> Result<Vec<usize>> {
        let mut ids: Vec<usize> = linearize(inst)?.iter().map(|t| self.vocab.get(t)).collect();
        ids.push(Vocabulary::EOS);
        Ok(ids)
    }

    fn source(&self, f: &mut Fwd, tokens: &[String]) -> Result<Source> {
        let hs = self.encoder.encode(f, tokens, &self.vocab, &self.chars)?;
        let rows = f.tape.stack_rows(&hs)?;
        let mut src = Source {
            hs,
            rows,
            keys: None,
            fixed: None,
        };
        match &self.attention {
            AttentionParams::Avg => {
                let e = f.tape.mean(&src.hs)?;
                src.fixed = Some((e, None));
            }
            AttentionParams::Ngram { score, project } => {
                let n = src.hs.len();
                let last = src.hs[n - 1];
                let mut parts = Vec::with_capacity(NGRAM_ORDER);
                let mut unigram = None;
                for g in 1..=NGRAM_ORDER.min(n) {
                    let grams: Vec<Var> = (0..=n - g)
                        .map(|i| f.tape.mean(&src.hs[i..i + g]))
                        .collect::<Result<_>>()?;
                    let m = f.tape.stack_rows(&grams)?;
                    let v = f.p(score[g - 1]);
                    let vt = f.tape.transpose(v);
                    let key = f.tape.matmul(vt, last)?;
                    let scores = f.tape.matmul(m, key)?;
                    let alpha = f.tape.softmax(scores, None)?;
                    if g == 1 {
                        unigram = Some(alpha);
                    }
                    let pooled = f.tape.weighted_rows(m, alpha)?;
                    let w = f.p(project[g - 1]);
                    parts.push(f.tape.matmul(w, pooled)?);
                }
                let summed = f.tape.add_n(&parts)?;
                let e = f.tape.concat(&[last, summed])?;
                src.fixed = Some((e, unigram));
            }
            AttentionParams::Single { source, .. } => {
                let w = f.p(*source);
                let wt = f.tape.transpose(w);
                src.keys = Some(f.tape.matmul(rows, wt)?);
            }
        }
        Ok(src)
    }

    /// Context vector and attention for the step following decoder state `h`.
    fn context(&self, f: &mut Fwd, src: &Source, h: Var) -> Result<(Var, Option<Var>)> {
        if let Some(fixed) = src.fixed {
            return Ok(fixed);
        }
        let AttentionParams::Single {
            query,
            query_bias,
            vector,
            ..
        } = &self.attention
        else {
            return Err(Error::domain("attention parameters missing"));
        };
        let keys = src.keys.ok_or_else(|| Error::domain("attention keys missing"))?;
        let (wq, bq, va) = (f.p(*query), f.p(*query_bias), f.p(*vector));
        let q = f.tape.affine(wq, h, bq)?;
        let pre = f.tape.add_row_broadcast(keys, q)?;
        let act = f.tape.tanh(pre);
        let scores = f.tape.matmul(act, va)?;
        let alpha = f.tape.softmax(scores, None)?;
        let e = f.tape.weighted_rows(src.rows, alpha)?;
        Ok((e, Some(alpha)))
    }

    /// Runs one step from `(h, c)` having last emitted `prev`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        f: &mut Fwd,
        src: &Source,
        h: Var,
        c: Var,
        prev: usize,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Option<Var>, Var, Var, Var)> {
        let (e, alpha) = self.context(f, src, h)?;
        let y = self.encoder.word.lookup(f, prev)?;
        let x = f.tape.concat(&[e, y])?;
        let (h2, c2) = self.decoder.step(f, x, h, c)?;
        let logits = self.projection.forward(f, h2)?;
        let probs = f.tape.softmax(logits, mask)?;
        Ok((probs, alpha, e, h2, c2))
    }

    fn mask_for<'m>(&self, mask: &'m [bool]) -> Option<&'m [bool]> {
        self.cfg.masking.then_some(mask)
    }

    /// Decoder output after feeding SOS and then `prefix`.
    pub fn step_output(&self, tokens: &[String], prefix: &[usize]) -> Result<StepOutput> {
        let mut f = Fwd::eval(&self.store);
        let src = self.source(&mut f, tokens)?;
        let mask = self.allowed_mask(tokens);
        let mut h = f.tape.zeros(self.cfg.hidden);
        let mut c = f.tape.zeros(self.cfg.hidden);
        let mut prev = Vocabulary::SOS;
        let mut last = None;
        for &next in prefix.iter().chain(core::iter::once(&usize::MAX)) {
            let (p, a, e, h2, c2) = self.step(&mut f, &src, h, c, prev, self.mask_for(&mask))?;
            (h, c, prev) = (h2, c2, next);
            last = Some((p, a, e));
        }
        let (p, a, e) = last.expect("at least one step");
        Ok(StepOutput {
            probs: f.value(p).data().to_vec(),
            attention: a.map(|a| f.value(a).data().to_vec()),
            context: f.value(e).data().to_vec(),
        })
    }

    /// Greedy generation until EOS or the step limit.
    pub fn greedy_decode(&self, tokens: &[String], keep_distributions: bool) -> Result<Decoded> {
        let mut f = Fwd::eval(&self.store);
        let src = self.source(&mut f, tokens)?;
        let mask = self.allowed_mask(tokens);
        let mut h = f.tape.zeros(self.cfg.hidden);
        let mut c = f.tape.zeros(self.cfg.hidden);
        let mut prev = Vocabulary::SOS;
        let mut out = Decoded {
            tokens: Vec::new(),
            ids: Vec::new(),
            attention: Vec::new(),
            distributions: Vec::new(),
            truncated: true,
        };
        let replace = self.cfg.unk_replacement && self.cfg.attention != WdecAttention::Avg;
        for _ in 0..self.cfg.max_steps {
            let (p, a, _, h2, c2) = self.step(&mut f, &src, h, c, prev, self.mask_for(&mask))?;
            (h, c) = (h2, c2);
            let probs = f.value(p).data();
            let id = argmax(probs);
            if keep_distributions {
                out.distributions.push(probs.to_vec());
            }
            let attn = a.map(|a| f.value(a).data().to_vec());
            out.ids.push(id);
            if id == Vocabulary::EOS {
                out.truncated = false;
                if let Some(at) = attn {
                    out.attention.push(at);
                }
                break;
            }
            let word = match (&attn, id == Vocabulary::UNK && replace) {
                (Some(at), true) => tokens[argmax(at)].clone(),
                _ => self.vocab.token(id).to_string(),
            };
            out.tokens.push(word);
            if let Some(at) = attn {
                out.attention.push(at);
            }
            prev = id;
        }
        Ok(out)
    }

    /// Tuple set extracted from a sentence.
    pub fn predict(&self, tokens: &[String]) -> Result<(Decoded, ParsedTuples)> {
        let d = self.greedy_decode(tokens, false)?;
        let parsed = parse_decoded(&d.tokens, &self.relations);
        Ok((d, parsed))
    }
}

impl Trainable for WdecModel {
    type Instance = JointInstance;

    fn params(&self) -> &ParameterStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Summed negative log likelihood of the gold tokens under teacher forcing.
    fn loss(&self, f: &mut Fwd, inst: &JointInstance) -> Result<(Var, usize)> {
        let targets = self.target_ids(inst)?;
        let mask = self.allowed_mask(&inst.tokens);
        if self.cfg.masking {
            if let Some(t) = targets.iter().position(|&id| !mask[id]) {
                return Err(Error::validation(
                    "tuples",
                    format!("gold token {:?} at step {t} is outside the copy mask", self.vocab.token(targets[t])),
                ));
            }
        }
        let src = self.source(f, &inst.tokens)?;
        let mut h = f.tape.zeros(self.cfg.hidden);
        let mut c = f.tape.zeros(self.cfg.hidden);
        let mut prev = Vocabulary::SOS;
        let mut terms = Vec::with_capacity(targets.len());
        for &gold in &targets {
            let (p, _, _, h2, c2) = self.step(f, &src, h, c, prev, self.mask_for(&mask))?;
            (h, c, prev) = (h2, c2, gold);
            terms.push(nll(f, p, gold)?);
        }
        Ok((f.tape.add_n(&terms)?, targets.len()))
    }

    /// Micro F1 of exact tuple matches.
    fn evaluate(&self, data: &[JointInstance]) -> Result<f64> {
        let mut pred = Vec::with_capacity(data.len());
        let mut gold = Vec::with_capacity(data.len());
        for inst in data {
            pred.push(self.predict(&inst.tokens)?.1.tuples);
            gold.push(inst.tuple_strings());
        }
        Ok(tuple_set_prf(&pred, &gold)?.f1)
    }
}
