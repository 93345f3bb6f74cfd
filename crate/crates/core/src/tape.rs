//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of a
//! scalar output with respect to every recorded node; parameter gradients can
//! then be folded into a [`ParameterStore`].

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Matrix plus a column vector added to every row.
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    /// Stack along rows.
    Concat(Box<[Var]>),
    /// Column vectors become the rows of a matrix.
    StackRows(Box<[Var]>),
    Transpose(Var),
    /// Row `i` of a matrix as a column vector.
    Row(Var, usize),
    /// Rows `[start, start + len)`.
    RowSlice(Var, usize, usize),
    Softmax(Var, Option<Box<[bool]>>),
    /// Elementwise maximum of equally shaped operands.
    MaxOf(Box<[Var]>),
    AddN(Box<[Var]>),
    Sum(Var),
    Pick(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Add parameter gradients into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParameterStore) {
        for (&id, &var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Shorthand for the only element of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Hash of every piecewise choice on the tape: the sign of each ReLU input
    /// and the winning operand of each elementwise max. Two evaluations with
    /// equal fingerprints lie on the same smooth piece of the function.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in self.value(*a).data() {
                        mix(u64::from(x > 0.0));
                    }
                }
                Op::MaxOf(parts) => {
                    for (k, &y) in node.value.data().iter().enumerate() {
                        let winner = parts
                            .iter()
                            .position(|&p| self.value(p).data()[k] == y)
                            .unwrap_or(0);
                        mix(winner as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(Tensor::zeros(n, 1))
    }

    /// Parameter leaf; repeated calls within one tape share a node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if vt.cols() != 1 || vt.rows() != mt.cols() {
            return Err(Error::shape(format!(
                "row broadcast of {:?} onto {:?}",
                vt.shape(),
                mt.shape()
            )));
        }
        let mut out = mt.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(vt.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRowBroadcast(m, v)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::log);
        self.push(out, Op::Ln(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape("concat column mismatch"));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::Concat(parts.into())))
    }

    pub fn stack_rows(&mut self, vectors: &[Var]) -> Result<Var> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::shape("stack of nothing"))?;
        let d = self.value(*first).len();
        let mut data = Vec::with_capacity(d * vectors.len());
        for &v in vectors {
            let t = self.value(v);
            if t.cols() != 1 || t.rows() != d {
                return Err(Error::shape("stack_rows expects equal column vectors"));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(vectors.len(), d, data)?;
        Ok(self.push(out, Op::StackRows(vectors.into())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let t = self.value(m);
        if i >= t.rows() {
            return Err(Error::shape(format!("row {i} of {} rows", t.rows())));
        }
        let out = Tensor::vector(t.row(i).to_vec());
        Ok(self.push(out, Op::Row(m, i)))
    }

    pub fn row_slice(&mut self, m: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(m);
        if start + len > t.rows() {
            return Err(Error::shape(format!(
                "rows {start}..{} of {}",
                start + len,
                t.rows()
            )));
        }
        let c = t.cols();
        let out = Tensor::from_vec(len, c, t.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::RowSlice(m, start, len)))
    }

    /// Softmax over a column vector. Positions with `mask[i] == false` get
    /// probability exactly zero.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(Error::shape("softmax expects a column vector"));
        }
        if let Some(m) = mask {
            if m.len() != x.rows() {
                return Err(Error::shape("softmax mask length"));
            }
        }
        let out = Tensor::vector(softmax_values(x.data(), mask)?);
        Ok(self.push(out, Op::Softmax(a, mask.map(Into::into))))
    }

    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::domain("max of nothing"))?;
        let mut out = self.value(*first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            check_same(&out, t, "max_of")?;
            for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
                if x > *o {
                    *o = x;
                }
            }
        }
        Ok(self.push(out, Op::MaxOf(parts.into())))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("sum of nothing"))?;
        let mut out = self.value(*first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            check_same(&out, t, "add_n")?;
            out.add_assign(t);
        }
        Ok(self.push(out, Op::AddN(parts.into())))
    }

    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let s = self.add_n(parts)?;
        Ok(self.scale(s, 1.0 / parts.len() as f64))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Element at flat index `i` as a 1x1 node.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.len() {
            return Err(Error::shape(format!("pick {i} of {}", t.len())));
        }
        let out = Tensor::scalar(t.data()[i]);
        Ok(self.push(out, Op::Pick(a, i)))
    }

    /// `W x + b` for a weight matrix, column input and column bias.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    /// Convex combination `sum_i p_i * rows_i` of the rows of `m` as a column vector.
    pub fn weighted_rows(&mut self, m: Var, p: Var) -> Result<Var> {
        let mt = self.transpose(m);
        self.matmul(mt, p)
    }

    /// Gradients of the scalar node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRowBroadcast(m, v) => {
                    let mut gv = Tensor::zeros(g.cols(), 1);
                    for i in 0..g.rows() {
                        for (o, x) in gv.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *m, g.clone());
                    acc(&mut grads, *v, gv);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y * (1.0 - y))?),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y))?),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 })?)
                }
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y)?),
                Op::Ln(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |g, x| g / x)?),
                Op::Concat(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts.iter() {
                        let r = self.value(p).rows();
                        let piece = Tensor::from_vec(
                            r,
                            cols,
                            g.data()[offset * cols..(offset + r) * cols].to_vec(),
                        )?;
                        acc(&mut grads, p, piece);
                        offset += r;
                    }
                }
                Op::StackRows(parts) => {
                    for (i, &p) in parts.iter().enumerate() {
                        acc(&mut grads, p, Tensor::vector(g.row(i).to_vec()));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Row(m, i) => {
                    let (r, c) = self.value(*m).shape();
                    let slot = grads[m.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    for (o, x) in slot.row_mut(*i).iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
                Op::RowSlice(m, start, len) => {
                    let (r, c) = self.value(*m).shape();
                    let slot = grads[m.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    let dst = &mut slot.data_mut()[start * c..(start + len) * c];
                    for (o, x) in dst.iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
                Op::Softmax(a, mask) => {
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(g, y)| g * y).sum();
                    let mut gx = g.zip_map(y, |g, y| y * (g - dot))?;
                    if let Some(m) = mask {
                        for (v, &keep) in gx.data_mut().iter_mut().zip(m.iter()) {
                            if !keep {
                                *v = 0.0;
                            }
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::MaxOf(parts) => {
                    let mut routed: Vec<Tensor> = parts
                        .iter()
                        .map(|&p| {
                            let (r, c) = self.value(p).shape();
                            Tensor::zeros(r, c)
                        })
                        .collect();
                    for k in 0..y.len() {
                        // First operand attaining the max takes the gradient.
                        let winner = parts
                            .iter()
                            .position(|&p| self.value(p).data()[k] == y.data()[k])
                            .unwrap_or(0);
                        routed[winner].data_mut()[k] += g.data()[k];
                    }
                    for (&p, t) in parts.iter().zip(routed) {
                        acc(&mut grads, p, t);
                    }
                }
                Op::AddN(parts) => {
                    for &p in parts.iter() {
                        acc(&mut grads, p, g.clone());
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Pick(a, i) => {
                    let (r, c) = self.value(*a).shape();
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    slot.data_mut()[*i] += g.item();
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Constant | Op::Param) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Max-shifted softmax over `logits`; masked-out entries are exactly zero.
pub fn softmax_values(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    if (0..logits.len()).any(|i| allowed(i) && logits[i].is_nan()) {
        // Propagate so callers see a non-finite loss rather than a masking error.
        return Ok(vec![f64::NAN; logits.len()]);
    }
    let max = (0..logits.len())
        .filter(|&i| allowed(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::domain("softmax with every position masked"));
    }
    let mut out: Vec<f64> = (0..logits.len())
        .map(|i| {
            if allowed(i) {
                libm::exp(logits[i] - max)
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central difference of `f` at every entry of `x`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut g = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn check(x: Tensor, build: impl Fn(&mut Tape, Var) -> Var) {
        let eval = |x: &Tensor| {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let out = build(&mut t, v);
            t.scalar(out)
        };
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let out = build(&mut t, v);
        let g = t.backward(out).unwrap();
        let analytic = g.get(v).cloned().unwrap_or(Tensor::zeros(x.rows(), x.cols()));
        let numeric = numeric_grad(&x, eval);
        assert!(
            analytic.max_abs_diff(&numeric) < 1e-6,
            "analytic {analytic:?} numeric {numeric:?}"
        );
    }

    fn sample(n: usize) -> Tensor {
        Tensor::vector((0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect())
    }

    #[test]
    fn fingerprint_tracks_piecewise_choices() {
        let fp = |x: [f64; 2], y: [f64; 2]| {
            let mut t = Tape::new();
            let a = t.constant(Tensor::from_vec(2, 1, x.to_vec()).unwrap());
            let b = t.constant(Tensor::from_vec(2, 1, y.to_vec()).unwrap());
            let r = t.relu(a);
            t.max_of(&[r, b]).unwrap();
            t.branch_fingerprint()
        };
        let base = fp([0.5, -0.2], [0.1, 0.3]);
        assert_eq!(base, fp([0.7, -0.9], [0.2, 0.4]));
        // relu sign flips
        assert_ne!(base, fp([0.5, 0.2], [0.1, 0.3]));
        // max winner changes
        assert_ne!(base, fp([0.5, -0.2], [0.6, 0.3]));
    }

    #[test]
    fn unary_ops_gradients() {
        check(sample(5), |t, v| {
            let a = t.sigmoid(v);
            let b = t.tanh(a);
            let c = t.exp(b);
            let d = t.ln(c);
            let e = t.scale(d, 3.0);
            t.sum(e)
        });
    }

    #[test]
    fn matmul_and_broadcast_gradients() {
        let m = Tensor::from_vec(3, 2, vec![0.1, -0.4, 0.3, 0.8, -0.5, 0.2]).unwrap();
        check(sample(2), move |t, v| {
            let mc = t.constant(m.clone());
            let mv = t.matmul(mc, v).unwrap();
            let head = t.row_slice(mv, 0, 2).unwrap();
            let st = t.stack_rows(&[v, v, head]).unwrap();
            let b = t.add_row_broadcast(st, v).unwrap();
            let s = t.tanh(b);
            t.sum(s)
        });
    }

    #[test]
    fn softmax_and_pick_gradients() {
        check(sample(4), |t, v| {
            let p = t.softmax(v, Some(&[true, false, true, true])).unwrap();
            let q = t.pick(p, 2).unwrap();
            t.ln(q)
        });
    }

    #[test]
    fn structural_ops_gradients() {
        check(sample(6), |t, v| {
            let a = t.row_slice(v, 0, 3).unwrap();
            let b = t.row_slice(v, 3, 3).unwrap();
            let m = t.max_of(&[a, b]).unwrap();
            let c = t.concat(&[m, a]).unwrap();
            let w = t.mul(c, c).unwrap();
            let s = t.add_n(&[w, c]).unwrap();
            let r = t.relu(s);
            let tr = t.transpose(r);
            let row = t.row(tr, 0).unwrap();
            t.sum(row)
        });
    }

    #[test]
    fn masked_softmax_is_exact_zero() {
        let p = softmax_values(&[2.0, 5.0, 3.0], Some(&[true, false, true])).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p[0] - 0.2689414213699951).abs() < 1e-12);
        assert!(softmax_values(&[1.0], Some(&[false])).is_err());
    }

    #[test]
    fn param_nodes_are_shared_and_accumulate() {
        let mut store = ParameterStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, id);
        let b = t.param(&store, id);
        assert_eq!(a, b);
        let m = t.mul(a, b).unwrap();
        let s = t.sum(m);
        let g = t.backward(s).unwrap();
        g.accumulate_into(&mut store);
        assert_eq!(store.get(id).grad.data(), &[2.0, 4.0]);
    }
}
