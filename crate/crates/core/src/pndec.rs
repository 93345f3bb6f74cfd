//! Pointer-network joint extraction: one tuple per decoding step, entity
//! spans located by two pointer networks and the relation by a classifier.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{span_text, CharVocab, JointInstance, RelationSet, Span, TupleStrings, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::tuple_set_prf;
use crate::joint::{EncoderDims, JointEncoder};
use crate::nn::{argmax, nll, BiLstm, Embedding, Fwd, Linear, LstmCell};
use crate::params::{ParamId, ParameterStore};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::train::Trainable;

/// Relation class that ends a tuple sequence.
pub const EOS_CLASS: usize = 0;
pub const EOS_RELATION: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PndecAttention {
    /// Query from the previous decoder state.
    DecHid,
    /// Query from the sum of previous tuple vectors.
    TupPrev,
    /// Both contexts concatenated.
    Combo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PndecConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_features: usize,
    pub hidden: usize,
    pub pointer_hidden: usize,
    pub relation_dim: usize,
    pub dropout: f64,
    pub attention: PndecAttention,
    pub max_tuples: usize,
}

impl Default for PndecConfig {
    fn default() -> Self {
        PndecConfig {
            word_dim: 300,
            char_dim: 50,
            char_features: 50,
            hidden: 300,
            pointer_hidden: 300,
            relation_dim: 300,
            dropout: 0.3,
            attention: PndecAttention::Combo,
            max_tuples: 10,
        }
    }
}

impl PndecConfig {
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
        if self.pointer_hidden == 0 || self.relation_dim == 0 {
            return Err(Error::config("pointer_hidden and relation_dim must be positive"));
        }
        if self.max_tuples == 0 {
            return Err(Error::config("max_tuples must be at least 1"));
        }
        Ok(())
    }

    /// Width of one tuple vector: two entity vectors and a relation embedding.
    pub fn tuple_dim(&self) -> usize {
        8 * self.pointer_hidden + self.relation_dim
    }
}

/// Gold decoding target for one step. The closing step has relation
/// [`EOS_RELATION`] and its spans are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerTuple {
    pub s1: usize,
    pub e1: usize,
    pub s2: usize,
    pub e2: usize,
    pub relation: String,
}

/// Index quadruples of the record's tuples, in record order, then the EOS step.
pub fn pointer_tuple_target(inst: &JointInstance) -> Result<Vec<PointerTuple>> {
    let n = inst.tokens.len();
    let mut out = Vec::with_capacity(inst.tuples.len() + 1);
    for t in &inst.tuples {
        t.e1_span.check(n, "tuples.e1_span")?;
        t.e2_span.check(n, "tuples.e2_span")?;
        if t.e1_span.overlaps(t.e2_span) {
            return Err(Error::validation("tuples", "the two entities of a tuple overlap"));
        }
        out.push(PointerTuple {
            s1: t.e1_span.start(),
            e1: t.e1_span.end(),
            s2: t.e2_span.start(),
            e2: t.e2_span.end(),
            relation: t.relation.clone(),
        });
    }
    out.push(PointerTuple {
        s1: 0,
        e1: 0,
        s2: 0,
        e2: 0,
        relation: EOS_RELATION.to_string(),
    });
    Ok(out)
}

/// Which entity a pass places first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassOrder {
    FirstThenSecond,
    SecondThenFirst,
}

/// Chosen spans and the product of their four pointer probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanChoice {
    pub e1: Span,
    pub e2: Span,
    pub score: f64,
}

impl SpanChoice {
    fn key(&self) -> (usize, usize, usize, usize) {
        (self.e1.start(), self.e1.end(), self.e2.start(), self.e2.end())
    }
}

/// Best `(b, e)` with `b <= e` maximizing `start[b] * end[e]` among spans
/// accepted by `allowed`; ties go to the smallest `(b, e)`.
fn best_span(start: &[f64], end: &[f64], allowed: impl Fn(Span) -> bool) -> Option<(Span, f64)> {
    let mut best: Option<(Span, f64)> = None;
    for b in 0..start.len() {
        for e in b..end.len() {
            let s = Span(b, e);
            if !allowed(s) {
                continue;
            }
            let v = start[b] * end[e];
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((s, v));
            }
        }
    }
    best
}

fn check_distributions(dists: [&[f64]; 4]) -> Result<usize> {
    let n = dists[0].len();
    if dists.iter().any(|d| d.len() != n) {
        return Err(Error::shape("pointer distributions differ in length"));
    }
    if n < 2 {
        return Err(Error::domain("two disjoint spans need at least two tokens"));
    }
    Ok(n)
}

/// One greedy pass: the leading entity takes its best span that leaves room
/// for the other, which then takes its best disjoint span.
pub fn constrained_pass(
    s1: &[f64],
    e1: &[f64],
    s2: &[f64],
    e2: &[f64],
    order: PassOrder,
) -> Result<SpanChoice> {
    let n = check_distributions([s1, e1, s2, e2])?;
    let full = Span(0, n - 1);
    let ((ls, le), (ts, te)) = match order {
        PassOrder::FirstThenSecond => ((s1, e1), (s2, e2)),
        PassOrder::SecondThenFirst => ((s2, e2), (s1, e1)),
    };
    let (lead, lv) = best_span(ls, le, |s| s != full).expect("n >= 2 leaves a span");
    let (trail, tv) = best_span(ts, te, |s| !s.overlaps(lead)).expect("lead leaves a token free");
    let (a, b) = match order {
        PassOrder::FirstThenSecond => (lead, trail),
        PassOrder::SecondThenFirst => (trail, lead),
    };
    Ok(SpanChoice {
        e1: a,
        e2: b,
        score: lv * tv,
    })
}

/// The better of the two greedy passes; equal products go to the smaller
/// `(b1, e1, b2, e2)`.
pub fn constrained_spans(s1: &[f64], e1: &[f64], s2: &[f64], e2: &[f64]) -> Result<SpanChoice> {
    let a = constrained_pass(s1, e1, s2, e2, PassOrder::FirstThenSecond)?;
    let b = constrained_pass(s1, e1, s2, e2, PassOrder::SecondThenFirst)?;
    Ok(if b.score > a.score || (b.score == a.score && b.key() < a.key()) {
        b
    } else {
        a
    })
}

/// A decoded tuple with its spans and pointer score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerPrediction {
    pub e1_span: Span,
    pub e2_span: Span,
    pub e1: String,
    pub e2: String,
    pub relation: String,
    pub score: f64,
}

/// Plain values of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleStep {
    pub s1: Vec<f64>,
    pub e1: Vec<f64>,
    pub s2: Vec<f64>,
    pub e2: Vec<f64>,
    /// Relation distribution with EOS at index 0.
    pub relation: Vec<f64>,
    /// Tuple vector emitted at this step.
    pub tuple: Vec<f64>,
    /// Sum of all tuple vectors emitted so far, this one included.
    pub prev_sum: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    source: ParamId,
    query: ParamId,
    query_bias: ParamId,
    vector: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct PointerNet {
    bilstm: BiLstm,
    start: Linear,
    end: Linear,
}

struct StepVars {
    h: Var,
    c: Var,
    s1: Var,
    e1: Var,
    s2: Var,
    e2: Var,
    r: Var,
    y: Var,
    y_sum: Var,
}

/// Gold spans and class of a teacher-forced step; spans absent on the EOS step.
type Forced = (Option<(Span, Span)>, usize);

#[derive(Debug, Clone)]
pub struct PndecModel {
    pub cfg: PndecConfig,
    pub relations: RelationSet,
    pub vocab: Vocabulary,
    pub chars: CharVocab,
    pub store: ParameterStore,
    encoder: JointEncoder,
    by_decoder: Option<Attention>,
    by_tuples: Option<Attention>,
    decoder: LstmCell,
    first: PointerNet,
    second: PointerNet,
    classifier: Linear,
    relation_embedding: Embedding,
}

impl PndecModel {
    pub fn new(
        cfg: PndecConfig,
        relations: RelationSet,
        vocab: Vocabulary,
        chars: CharVocab,
        words: Option<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let encoder = JointEncoder::new(&mut store, &mut rng, cfg.encoder_dims(), &vocab, &chars, words)?;
        let (h, p) = (cfg.hidden, cfg.pointer_hidden);
        let tuple = cfg.tuple_dim();
        let mut attention = |name: &str, query_in: usize| -> Result<Attention> {
            Ok(Attention {
                source: store.add_uniform(&mut rng, &format!("{name}.source"), h, h)?,
                query: store.add_uniform(&mut rng, &format!("{name}.query"), h, query_in)?,
                query_bias: store.add_zeros(&format!("{name}.query_bias"), h, 1)?,
                vector: store.add_uniform(&mut rng, &format!("{name}.vector"), h, 1)?,
            })
        };
        let by_decoder = match cfg.attention {
            PndecAttention::DecHid | PndecAttention::Combo => Some(attention("attention.decoder", h)?),
            PndecAttention::TupPrev => None,
        };
        let by_tuples = match cfg.attention {
            PndecAttention::TupPrev | PndecAttention::Combo => Some(attention("attention.tuples", tuple)?),
            PndecAttention::DecHid => None,
        };
        let context = h * usize::from(by_decoder.is_some()) + h * usize::from(by_tuples.is_some());
        let decoder = LstmCell::new(&mut store, &mut rng, "decoder", context + tuple, h)?;
        let mut pointer = |name: &str, input: usize| -> Result<PointerNet> {
            Ok(PointerNet {
                bilstm: BiLstm::new(&mut store, &mut rng, name, input, p)?,
                start: Linear::new(&mut store, &mut rng, &format!("{name}.start"), 2 * p, 1)?,
                end: Linear::new(&mut store, &mut rng, &format!("{name}.end"), 2 * p, 1)?,
            })
        };
        let first = pointer("pointer1", 2 * h)?;
        let second = pointer("pointer2", 2 * h + 2 * p)?;
        let classes = relations.len() + 1;
        let classifier = Linear::new(&mut store, &mut rng, "relation", 8 * p + h, classes)?;
        // row 0 is padding, class k lives in row k + 1
        let relation_embedding =
            Embedding::new(&mut store, &mut rng, "relation_embedding", classes + 1, cfg.relation_dim)?;
        Ok(PndecModel {
            cfg,
            relations,
            vocab,
            chars,
            store,
            encoder,
            by_decoder,
            by_tuples,
            decoder,
            first,
            second,
            classifier,
            relation_embedding,
        })
    }

    pub fn class_of(&self, relation: &str) -> Option<usize> {
        if relation == EOS_RELATION {
            return Some(EOS_CLASS);
        }
        self.relations.index(relation).map(|k| k + 1)
    }

    pub fn class_label(&self, class: usize) -> &str {
        if class == EOS_CLASS {
            EOS_RELATION
        } else {
            &self.relations.names()[class - 1]
        }
    }

    fn attend(f: &mut Fwd, a: Attention, rows: Var, query: Var) -> Result<Var> {
        let (wu, wq, bq, va) = (f.p(a.source), f.p(a.query), f.p(a.query_bias), f.p(a.vector));
        let wut = f.tape.transpose(wu);
        let keys = f.tape.matmul(rows, wut)?;
        let q = f.tape.affine(wq, query, bq)?;
        let pre = f.tape.add_row_broadcast(keys, q)?;
        let act = f.tape.tanh(pre);
        let scores = f.tape.matmul(act, va)?;
        let alpha = f.tape.softmax(scores, None)?;
        f.tape.weighted_rows(rows, alpha)
    }

    fn pointer_heads(f: &mut Fwd, net: &PointerNet, inputs: &[Var]) -> Result<(Var, Var, Var)> {
        let hs = net.bilstm.encode(f, inputs)?;
        let m = f.tape.stack_rows(&hs)?;
        let sl = net.start.forward_rows(f, m)?;
        let el = net.end.forward_rows(f, m)?;
        let s = f.tape.softmax(sl, None)?;
        let e = f.tape.softmax(el, None)?;
        Ok((m, s, e))
    }

    /// Entity vector from start/end weights, or from the rows at a forced span.
    fn entity_vector(f: &mut Fwd, m: Var, s: Var, e: Var, span: Option<Span>) -> Result<Var> {
        let (a, b) = match span {
            Some(sp) => (f.tape.row(m, sp.start())?, f.tape.row(m, sp.end())?),
            None => (f.tape.weighted_rows(m, s)?, f.tape.weighted_rows(m, e)?),
        };
        f.tape.concat(&[a, b])
    }

    fn step(
        &self,
        f: &mut Fwd,
        hs: &[Var],
        rows: Var,
        (h, c, y_sum): (Var, Var, Var),
        forced: Option<Forced>,
    ) -> Result<StepVars> {
        let mut contexts = Vec::with_capacity(2);
        if let Some(a) = self.by_decoder {
            contexts.push(Self::attend(f, a, rows, h)?);
        }
        if let Some(a) = self.by_tuples {
            contexts.push(Self::attend(f, a, rows, y_sum)?);
        }
        contexts.push(y_sum);
        let x = f.tape.concat(&contexts)?;
        let (h, c) = self.decoder.step(f, x, h, c)?;

        let first_in: Vec<Var> = hs.iter().map(|&he| f.tape.concat(&[h, he])).collect::<Result<_>>()?;
        let (k, s1, e1) = Self::pointer_heads(f, &self.first, &first_in)?;
        let mut second_in = Vec::with_capacity(hs.len());
        for (i, &he) in hs.iter().enumerate() {
            let hk = f.tape.row(k, i)?;
            second_in.push(f.tape.concat(&[hk, h, he])?);
        }
        let (l, s2, e2) = Self::pointer_heads(f, &self.second, &second_in)?;

        let spans = forced.and_then(|(s, _)| s);
        let a1 = Self::entity_vector(f, k, s1, e1, spans.map(|s| s.0))?;
        let a2 = Self::entity_vector(f, l, s2, e2, spans.map(|s| s.1))?;
        let feats = f.tape.concat(&[a1, a2, h])?;
        let logits = self.classifier.forward(f, feats)?;
        let r = f.tape.softmax(logits, None)?;
        let class = match forced {
            Some((_, class)) => class,
            None => argmax(f.value(r).data()),
        };
        let z = self.relation_embedding.lookup(f, class + 1)?;
        let y = f.tape.concat(&[a1, a2, z])?;
        let y_sum = f.tape.add(y_sum, y)?;
        Ok(StepVars {
            h,
            c,
            s1,
            e1,
            s2,
            e2,
            r,
            y,
            y_sum,
        })
    }

    fn initial(&self, f: &mut Fwd) -> (Var, Var, Var) {
        (
            f.tape.zeros(self.cfg.hidden),
            f.tape.zeros(self.cfg.hidden),
            f.tape.zeros(self.cfg.tuple_dim()),
        )
    }

    fn plain(f: &Fwd, v: &StepVars) -> TupleStep {
        let d = |x: Var| f.value(x).data().to_vec();
        TupleStep {
            s1: d(v.s1),
            e1: d(v.e1),
            s2: d(v.s2),
            e2: d(v.e2),
            relation: d(v.r),
            tuple: d(v.y),
            prev_sum: d(v.y_sum),
        }
    }

    /// Free-running steps: each feeds back its own argmax relation.
    pub fn run_steps(&self, tokens: &[String], steps: usize) -> Result<Vec<TupleStep>> {
        let mut f = Fwd::eval(&self.store);
        let hs = self.encoder.encode(&mut f, tokens, &self.vocab, &self.chars)?;
        let rows = f.tape.stack_rows(&hs)?;
        let mut state = self.initial(&mut f);
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let v = self.step(&mut f, &hs, rows, state, None)?;
            state = (v.h, v.c, v.y_sum);
            out.push(Self::plain(&f, &v));
        }
        Ok(out)
    }

    /// Teacher-forced steps over the gold target, EOS step included.
    pub fn forced_steps(&self, inst: &JointInstance) -> Result<Vec<TupleStep>> {
        let mut f = Fwd::eval(&self.store);
        let steps = self.forced(&mut f, inst)?;
        Ok(steps.iter().map(|(v, _)| Self::plain(&f, v)).collect())
    }

    fn forced(&self, f: &mut Fwd, inst: &JointInstance) -> Result<Vec<(StepVars, PointerTuple)>> {
        let target = pointer_tuple_target(inst)?;
        let hs = self.encoder.encode(f, &inst.tokens, &self.vocab, &self.chars)?;
        let rows = f.tape.stack_rows(&hs)?;
        let mut state = self.initial(f);
        let mut out = Vec::with_capacity(target.len());
        for t in target {
            let class = self
                .class_of(&t.relation)
                .ok_or_else(|| Error::validation("tuples.relation", format!("unknown relation {:?}", t.relation)))?;
            let spans = (class != EOS_CLASS).then_some((Span(t.s1, t.e1), Span(t.s2, t.e2)));
            let v = self.step(f, &hs, rows, state, Some((spans, class)))?;
            state = (v.h, v.c, v.y_sum);
            out.push((v, t));
        }
        Ok(out)
    }

    /// Decodes tuples until EOS or the tuple limit, dropping duplicates and
    /// tuples whose entity strings coincide.
    pub fn decode(&self, tokens: &[String]) -> Result<Vec<PointerPrediction>> {
        if tokens.len() < 2 {
            return Ok(Vec::new());
        }
        let steps = {
            let mut f = Fwd::eval(&self.store);
            let hs = self.encoder.encode(&mut f, tokens, &self.vocab, &self.chars)?;
            let rows = f.tape.stack_rows(&hs)?;
            let mut state = self.initial(&mut f);
            let mut steps = Vec::new();
            for _ in 0..self.cfg.max_tuples {
                let v = self.step(&mut f, &hs, rows, state, None)?;
                state = (v.h, v.c, v.y_sum);
                let p = Self::plain(&f, &v);
                let stop = argmax(&p.relation) == EOS_CLASS;
                steps.push(p);
                if stop {
                    break;
                }
            }
            steps
        };
        let mut seen: BTreeSet<TupleStrings> = BTreeSet::new();
        let mut out = Vec::new();
        for p in steps {
            let class = argmax(&p.relation);
            if class == EOS_CLASS {
                break;
            }
            let choice = constrained_spans(&p.s1, &p.e1, &p.s2, &p.e2)?;
            let e1 = span_text(tokens, choice.e1);
            let e2 = span_text(tokens, choice.e2);
            let relation = self.class_label(class).to_string();
            if e1 == e2 || !seen.insert((e1.clone(), e2.clone(), relation.clone())) {
                continue;
            }
            out.push(PointerPrediction {
                e1_span: choice.e1,
                e2_span: choice.e2,
                e1,
                e2,
                relation,
                score: choice.score,
            });
        }
        Ok(out)
    }

    pub fn predict_set(&self, tokens: &[String]) -> Result<BTreeSet<TupleStrings>> {
        Ok(self
            .decode(tokens)?
            .into_iter()
            .map(|p| (p.e1, p.e2, p.relation))
            .collect())
    }
}

impl Trainable for PndecModel {
    type Instance = JointInstance;

    fn params(&self) -> &ParameterStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Relation and four pointer log likelihoods summed over steps; the EOS
    /// step contributes only its relation term.
    fn loss(&self, f: &mut Fwd, inst: &JointInstance) -> Result<(Var, usize)> {
        let steps = self.forced(f, inst)?;
        let count = steps.len();
        let mut terms = Vec::with_capacity(5 * count);
        for (v, t) in steps {
            let class = self.class_of(&t.relation).expect("checked while forcing");
            terms.push(nll(f, v.r, class)?);
            if class != EOS_CLASS {
                terms.push(nll(f, v.s1, t.s1)?);
                terms.push(nll(f, v.e1, t.e1)?);
                terms.push(nll(f, v.s2, t.s2)?);
                terms.push(nll(f, v.e2, t.e2)?);
            }
        }
        Ok((f.tape.add_n(&terms)?, count))
    }

    /// Micro F1 of exact tuple matches.
    fn evaluate(&self, data: &[JointInstance]) -> Result<f64> {
        let mut pred = Vec::with_capacity(data.len());
        let mut gold = Vec::with_capacity(data.len());
        for inst in data {
            pred.push(self.predict_set(&inst.tokens)?);
            gold.push(inst.tuple_strings());
        }
        Ok(tuple_set_prf(&pred, &gold)?.f1)
    }
}
