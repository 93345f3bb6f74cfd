//! Layers shared by every model: embeddings, LSTM cells, convolution with
//! max pooling, character word features and dropout.
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParameterStore`] and every
//! forward pass is recorded on the [`Tape`] owned by a [`Fwd`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One forward pass: a fresh tape, read access to parameters and, in training
/// mode, the generator that draws dropout masks.
pub struct Fwd<'a> {
    pub tape: Tape,
    pub store: &'a ParameterStore,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Fwd<'a> {
    /// Evaluation mode: dropout is the identity.
    pub fn eval(store: &'a ParameterStore) -> Self {
        Fwd {
            tape: Tape::new(),
            store,
            rng: None,
        }
    }

    pub fn train(store: &'a ParameterStore, rng: &'a mut ChaCha8Rng) -> Self {
        Fwd {
            tape: Tape::new(),
            store,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Inverted dropout; identity at rate 0 and outside training.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if rate <= 0.0 {
            return x;
        }
        let (r, c) = self.tape.value(x).shape();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.tape.constant(Tensor::from_vec(r, c, mask).expect("mask shape"));
        self.tape.mul(x, m).expect("mask shape")
    }
}

/// `W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Linear {
            w: store.add_uniform(rng, &format!("{name}.weight"), output, input)?,
            b: store.add_zeros(&format!("{name}.bias"), output, 1)?,
            input,
            output,
        })
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let w = f.p(self.w);
        let b = f.p(self.b);
        f.tape.affine(w, x, b)
    }

    /// Applies the layer to every row of `m` (`n x input`), returning `n x output`.
    pub fn forward_rows(&self, f: &mut Fwd, m: Var) -> Result<Var> {
        let w = f.p(self.w);
        let b = f.p(self.b);
        let wt = f.tape.transpose(w);
        let mw = f.tape.matmul(m, wt)?;
        f.tape.add_row_broadcast(mw, b)
    }
}

/// Lookup table whose row 0 is the padding vector.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

pub const PAD: usize = 0;

impl Embedding {
    /// Seeded uniform rows with a zero padding row.
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        rows: usize,
        dim: usize,
    ) -> Result<Self> {
        let table = store.add_uniform(rng, name, rows, dim)?;
        store.value_mut(table).row_mut(PAD).fill(0.0);
        Ok(Embedding { table, rows, dim })
    }

    /// Wrap a preloaded matrix.
    pub fn from_tensor(
        store: &mut ParameterStore,
        name: &str,
        mut value: Tensor,
        trainable: bool,
    ) -> Result<Self> {
        if value.rows() == 0 {
            return Err(Error::shape("embedding table needs at least the padding row"));
        }
        value.row_mut(PAD).fill(0.0);
        let (rows, dim) = value.shape();
        let table = store.add(name, value, trainable)?;
        Ok(Embedding { table, rows, dim })
    }

    /// Row `idx` as a column vector; padding is a constant zero vector.
    pub fn lookup(&self, f: &mut Fwd, idx: usize) -> Result<Var> {
        if idx >= self.rows {
            return Err(Error::shape(format!(
                "index {idx} outside embedding table of {} rows",
                self.rows
            )));
        }
        if idx == PAD {
            return Ok(f.tape.zeros(self.dim));
        }
        let t = f.p(self.table);
        f.tape.row(t, idx)
    }
}

/// LSTM cell with gates stacked as input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    /// `4h x input`
    pub w: ParamId,
    /// `4h x h`
    pub u: ParamId,
    /// `4h x 1`
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(LstmCell {
            w: store.add_uniform(rng, &format!("{name}.input"), 4 * hidden, input)?,
            u: store.add_uniform(rng, &format!("{name}.recurrent"), 4 * hidden, hidden)?,
            b: store.add_zeros(&format!("{name}.bias"), 4 * hidden, 1)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, f: &mut Fwd, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xs = f.value(x).shape();
        if xs != (self.input, 1) || f.value(h).shape() != (self.hidden, 1) {
            return Err(Error::shape(format!(
                "lstm step with input {xs:?} and state {:?}, cell is {}->{}",
                f.value(h).shape(),
                self.input,
                self.hidden
            )));
        }
        let (w, u, b) = (f.p(self.w), f.p(self.u), f.p(self.b));
        let t = &mut f.tape;
        let wx = t.matmul(w, x)?;
        let uh = t.matmul(u, h)?;
        let z = t.add_n(&[wx, uh, b])?;
        let hd = self.hidden;
        let zi = t.row_slice(z, 0, hd)?;
        let zf = t.row_slice(z, hd, hd)?;
        let zc = t.row_slice(z, 2 * hd, hd)?;
        let zo = t.row_slice(z, 3 * hd, hd)?;
        let i = t.sigmoid(zi);
        let fg = t.sigmoid(zf);
        let cand = t.tanh(zc);
        let o = t.sigmoid(zo);
        let keep = t.mul(fg, c)?;
        let write = t.mul(i, cand)?;
        let c_new = t.add(keep, write)?;
        let squashed = t.tanh(c_new);
        let h_new = t.mul(o, squashed)?;
        Ok((h_new, c_new))
    }

    /// Runs the cell over `inputs` from zero state, returning every hidden state.
    pub fn run(&self, f: &mut Fwd, inputs: &[Var]) -> Result<Vec<Var>> {
        let mut h = f.tape.zeros(self.hidden);
        let mut c = f.tape.zeros(self.hidden);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            (h, c) = self.step(f, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Plain-value LSTM step.
pub fn lstm_step(
    store: &ParameterStore,
    cell: &LstmCell,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut f = Fwd::eval(store);
    let xv = f.tape.vector(x.to_vec());
    let hv = f.tape.vector(h.to_vec());
    let cv = f.tape.vector(c.to_vec());
    let (h2, c2) = cell.step(&mut f, xv, hv, cv)?;
    Ok((f.value(h2).data().to_vec(), f.value(c2).data().to_vec()))
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden_per_direction: usize,
    ) -> Result<Self> {
        Ok(BiLstm {
            fwd: LstmCell::new(store, rng, &format!("{name}.fwd"), input, hidden_per_direction)?,
            bwd: LstmCell::new(store, rng, &format!("{name}.bwd"), input, hidden_per_direction)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    /// Position `t` of the output is forward state `t` followed by backward state `t`.
    pub fn encode(&self, f: &mut Fwd, inputs: &[Var]) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(Error::domain("bilstm over an empty sequence"));
        }
        let forward = self.fwd.run(f, inputs)?;
        let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
        let mut backward = self.bwd.run(f, &reversed)?;
        backward.reverse();
        forward
            .into_iter()
            .zip(backward)
            .map(|(a, b)| f.tape.concat(&[a, b]))
            .collect()
    }
}

/// Plain-value bidirectional encoding.
pub fn bilstm_encode(
    store: &ParameterStore,
    layer: &BiLstm,
    inputs: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut f = Fwd::eval(store);
    let xs: Vec<Var> = inputs.iter().map(|x| f.tape.vector(x.clone())).collect();
    let out = layer.encode(&mut f, &xs)?;
    Ok(out.iter().map(|&v| f.value(v).data().to_vec()).collect())
}

/// Filter bank of width `width` over `input`-dimensional vectors, max pooled.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    /// `filters x (width * input)`
    pub filters: ParamId,
    pub count: usize,
    pub width: usize,
    pub input: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        count: usize,
        width: usize,
    ) -> Result<Self> {
        Ok(Conv {
            filters: store.add_uniform(rng, name, count, width * input)?,
            count,
            width,
            input,
        })
    }

    /// Window `i` reads `inputs[i..i + width]` for every `i` in `range`.
    /// Positions outside `range` read as zero vectors. Returns, per filter, the
    /// maximum window score.
    pub fn max_pool(&self, f: &mut Fwd, inputs: &[Var], range: Range<usize>) -> Result<Var> {
        if range.is_empty() {
            return Err(Error::domain("convolution over an empty range"));
        }
        if range.end > inputs.len() {
            return Err(Error::shape(format!(
                "range {range:?} outside a sequence of {}",
                inputs.len()
            )));
        }
        let zero = f.tape.zeros(self.input);
        let mut windows = Vec::with_capacity(range.len());
        for i in range.clone() {
            let parts: Vec<Var> = (i..i + self.width)
                .map(|j| if j < range.end { inputs[j] } else { zero })
                .collect();
            windows.push(f.tape.concat(&parts)?);
        }
        let fb = f.p(self.filters);
        let m = f.tape.stack_rows(&windows)?;
        let ft = f.tape.transpose(fb);
        // n x count: one row of filter scores per window
        let scores = f.tape.matmul(m, ft)?;
        let rows: Vec<Var> = (0..range.len())
            .map(|i| f.tape.row(scores, i))
            .collect::<Result<_>>()?;
        f.tape.max_of(&rows)
    }
}

/// Plain-value convolution with max pooling.
pub fn conv_maxpool(
    store: &ParameterStore,
    conv: &Conv,
    inputs: &[Vec<f64>],
    range: Range<usize>,
) -> Result<Vec<f64>> {
    let mut f = Fwd::eval(store);
    let xs: Vec<Var> = inputs.iter().map(|x| f.tape.vector(x.clone())).collect();
    let out = conv.max_pool(&mut f, &xs, range)?;
    Ok(f.value(out).data().to_vec())
}

/// Words are cut or padded to this many characters before convolution.
pub const MAX_WORD_CHARS: usize = 10;
pub const CHAR_WIDTH: usize = 3;

/// Character-level word feature: character embeddings, convolution, max pooling.
#[derive(Debug, Clone, Copy)]
pub struct CharFeature {
    pub embed: Embedding,
    pub conv: Conv,
}

impl CharFeature {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        chars: usize,
        char_dim: usize,
        features: usize,
    ) -> Result<Self> {
        Ok(CharFeature {
            embed: Embedding::new(store, rng, &format!("{name}.chars"), chars, char_dim)?,
            conv: Conv::new(
                store,
                rng,
                &format!("{name}.filters"),
                char_dim,
                features,
                CHAR_WIDTH,
            )?,
        })
    }

    pub fn dim(&self) -> usize {
        self.conv.count
    }

    /// `char_ids` are character vocabulary indices; only the first
    /// [`MAX_WORD_CHARS`] are used and the rest of the window is padding.
    pub fn forward(&self, f: &mut Fwd, char_ids: &[usize]) -> Result<Var> {
        let mut ids = [PAD; MAX_WORD_CHARS];
        for (slot, &c) in ids.iter_mut().zip(char_ids) {
            *slot = c;
        }
        let xs: Vec<Var> = ids
            .iter()
            .map(|&c| self.embed.lookup(f, c))
            .collect::<Result<_>>()?;
        self.conv.max_pool(f, &xs, 0..MAX_WORD_CHARS)
    }
}

/// Plain-value masked softmax.
pub fn masked_softmax(logits: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != allowed.len() {
        return Err(Error::shape("mask length differs from logits"));
    }
    crate::tape::softmax_values(logits, Some(allowed))
}

/// Negative log of `probs[gold]` as a 1x1 node.
pub fn nll(f: &mut Fwd, probs: Var, gold: usize) -> Result<Var> {
    let p = f.tape.pick(probs, gold)?;
    let lp = f.tape.ln(p);
    Ok(f.tape.scale(lp, -1.0))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Column vector of `n` copies of `value`.
pub fn filled(n: usize, value: f64) -> Tensor {
    Tensor::vector(vec![value; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::sigmoid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    /// Gate equations written out scalar by scalar.
    fn lstm_oracle(
        w: &Tensor,
        u: &Tensor,
        b: &Tensor,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let pre = |gate: usize, k: usize| {
            let row = gate * hd + k;
            let mut s = b[(row, 0)];
            for (j, xv) in x.iter().enumerate() {
                s += w[(row, j)] * xv;
            }
            for (j, hv) in h.iter().enumerate() {
                s += u[(row, j)] * hv;
            }
            s
        };
        let mut hn = vec![0.0; hd];
        let mut cn = vec![0.0; hd];
        for k in 0..hd {
            let i = sigmoid(pre(0, k));
            let fg = sigmoid(pre(1, k));
            let cand = libm::tanh(pre(2, k));
            let o = sigmoid(pre(3, k));
            cn[k] = fg * c[k] + i * cand;
            hn[k] = o * libm::tanh(cn[k]);
        }
        (hn, cn)
    }

    fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_cell_keeps_half_the_memory() {
        let mut s = ParameterStore::new();
        let cell = LstmCell::new(&mut s, &mut rng(), "l", 3, 2).unwrap();
        for p in s.iter_mut() {
            p.value.fill(0.0);
        }
        let (h, c) = lstm_step(&s, &cell, &[1.0, 2.0, 3.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
        let (_, c) = lstm_step(&s, &cell, &[1.0, 2.0, 3.0], &[0.0, 0.0], &[4.0, -2.0]).unwrap();
        assert_eq!(c, vec![2.0, -1.0]);
    }

    #[test]
    fn lstm_step_matches_scalar_oracle() {
        let mut r = rng();
        let mut s = ParameterStore::new();
        let cell = LstmCell::new(&mut s, &mut r, "l", 4, 3).unwrap();
        for v in s.value_mut(cell.b).data_mut() {
            *v = r.random_range(-0.5..0.5);
        }
        let (x, h, c) = (random_vec(&mut r, 4), random_vec(&mut r, 3), random_vec(&mut r, 3));
        let (ha, ca) = lstm_step(&s, &cell, &x, &h, &c).unwrap();
        let (ho, co) = lstm_oracle(s.value(cell.w), s.value(cell.u), s.value(cell.b), &x, &h, &c);
        for (a, o) in ha.iter().chain(&ca).zip(ho.iter().chain(&co)) {
            assert!((a - o).abs() < 1e-10);
        }
        assert!(lstm_step(&s, &cell, &x[..3], &h, &c).is_err());
    }

    #[test]
    fn bilstm_matches_two_pass_unroll() {
        let mut r = rng();
        let mut s = ParameterStore::new();
        let bi = BiLstm::new(&mut s, &mut r, "bi", 2, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 2)).collect();
        let out = bilstm_encode(&s, &bi, &xs).unwrap();
        assert_eq!(out[0].len(), 6);

        let run = |cell: &LstmCell, seq: Vec<&Vec<f64>>| {
            let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
            let mut hs = Vec::new();
            for x in seq {
                (h, c) = lstm_oracle(s.value(cell.w), s.value(cell.u), s.value(cell.b), x, &h, &c);
                hs.push(h.clone());
            }
            hs
        };
        let fwd = run(&bi.fwd, xs.iter().collect());
        let mut bwd = run(&bi.bwd, xs.iter().rev().collect());
        bwd.reverse();
        for t in 0..3 {
            let expect: Vec<f64> = fwd[t].iter().chain(&bwd[t]).copied().collect();
            for (a, b) in out[t].iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!(bilstm_encode(&s, &bi, &[]).is_err());
    }

    #[test]
    fn conv_single_filter_picks_max() {
        let mut s = ParameterStore::new();
        let conv = Conv::new(&mut s, &mut rng(), "c", 1, 1, 1).unwrap();
        s.value_mut(conv.filters).fill(1.0);
        let out = conv_maxpool(&s, &conv, &[vec![1.0], vec![3.0], vec![2.0]], 0..3).unwrap();
        assert_eq!(out, vec![3.0]);
        assert!(conv_maxpool(&s, &conv, &[vec![1.0]], 0..0).is_err());
    }

    #[test]
    fn conv_matches_window_enumeration() {
        let mut r = rng();
        let mut s = ParameterStore::new();
        let conv = Conv::new(&mut s, &mut r, "c", 2, 3, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut r, 2)).collect();
        let out = conv_maxpool(&s, &conv, &xs, 0..4).unwrap();
        let fb = s.value(conv.filters);
        for k in 0..3 {
            let mut best = f64::NEG_INFINITY;
            for i in 0..4 {
                let mut score = 0.0;
                for o in 0..3 {
                    if i + o < 4 {
                        for d in 0..2 {
                            score += fb[(k, o * 2 + d)] * xs[i + o][d];
                        }
                    }
                }
                best = best.max(score);
            }
            assert!((out[k] - best).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_ignores_tokens_outside_range() {
        let mut r = rng();
        let mut s = ParameterStore::new();
        let conv = Conv::new(&mut s, &mut r, "c", 2, 3, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut r, 2)).collect();
        let inner = conv_maxpool(&s, &conv, &xs, 1..4).unwrap();
        let sliced = conv_maxpool(&s, &conv, &xs[1..4], 0..3).unwrap();
        assert_eq!(inner, sliced);
    }

    #[test]
    fn constant_input_pools_to_its_window_score() {
        let mut r = rng();
        let mut s = ParameterStore::new();
        let conv = Conv::new(&mut s, &mut r, "c", 2, 4, 1).unwrap();
        let xs = vec![vec![0.3, -0.7]; 5];
        let out = conv_maxpool(&s, &conv, &xs, 0..5).unwrap();
        let single = conv_maxpool(&s, &conv, &xs[..1], 0..1).unwrap();
        assert_eq!(out, single);
    }

    #[test]
    fn char_feature_truncates_and_is_pure() {
        let mut s = ParameterStore::new();
        let cf = CharFeature::new(&mut s, &mut rng(), "cf", 20, 4, 5).unwrap();
        let run = |ids: &[usize]| {
            let mut f = Fwd::eval(&s);
            let v = cf.forward(&mut f, ids).unwrap();
            f.value(v).data().to_vec()
        };
        let long: Vec<usize> = (2..14).collect();
        assert_eq!(run(&long), run(&long[..10]));
        assert_eq!(run(&[3, 4]), run(&[3, 4]));
        assert_eq!(run(&[]), vec![0.0; 5]);
    }

    #[test]
    fn masked_softmax_examples() {
        let p = masked_softmax(&[2.0, 5.0, 3.0], &[true, false, true]).unwrap();
        assert!((p[0] - 0.2689).abs() < 1e-4 && p[1] == 0.0 && (p[2] - 0.7311).abs() < 1e-4);
        assert_eq!(masked_softmax(&[1.0; 4], &[true; 4]).unwrap(), vec![0.25; 4]);
        assert_eq!(
            masked_softmax(&[1.0, 9.0], &[false, true]).unwrap(),
            vec![0.0, 1.0]
        );
        assert!(masked_softmax(&[1.0], &[false]).is_err());
    }

    #[test]
    fn dropout_is_identity_at_eval_and_rate_zero() {
        let s = ParameterStore::new();
        let mut r = rng();
        let mut f = Fwd::train(&s, &mut r);
        let x = f.tape.vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(f.dropout(x, 0.0), x);
        let mut e = Fwd::eval(&s);
        let y = e.tape.vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(e.dropout(y, 0.5), y);
    }

    #[test]
    fn padding_row_is_zero() {
        let mut s = ParameterStore::new();
        let e = Embedding::new(&mut s, &mut rng(), "e", 4, 3).unwrap();
        assert!(s.value(e.table).row(PAD).iter().all(|&v| v == 0.0));
        let mut f = Fwd::eval(&s);
        assert!(e.lookup(&mut f, 4).is_err());
    }

    proptest! {
        #[test]
        fn masked_softmax_is_a_distribution(
            logits in prop::collection::vec(-30.0f64..30.0, 1..20),
            seed in any::<u64>(),
        ) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut mask: Vec<bool> = logits.iter().map(|_| r.random()).collect();
            mask[0] = true;
            let p = masked_softmax(&logits, &mask).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for (pi, &m) in p.iter().zip(&mask) {
                prop_assert!(*pi >= 0.0);
                if !m { prop_assert_eq!(*pi, 0.0); }
            }
        }
    }
}
