//! Reverse-mode gradient tape.
//!
//! A tape records the forward computation of one sample as a Wengert list.
//! Parameters are borrowed from a [`ParamStore`]; [`Tape::backward`] walks the
//! list in reverse and returns per-parameter gradients without touching the
//! store, so several tapes may be evaluated against the same store.
//!
//! Matrices use the row-vector convention: a linear map is `y = x·W` with
//! `W` stored `in × out`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{self, Real, Tensor};
use crate::{Error, Result};

/// Lower clamp applied to probabilities inside the cross-entropy log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Deliberate backward corruptions used as negative controls for the
/// gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Negates the gradient flowing back through every `tanh`.
    SignFlip,
}

enum Op<T> {
    Input,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    SoftmaxRows(Var),
    SquashRows(Var),
    Tanh(Var),
    Relu(Var),
    Mask(Var, Vec<T>),
    MeanRows(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Row(Var, usize),
    RoutePredict { u: Var, w: Var },
    WeightedSum { c: Var, uhat: Var },
    Agreement { uhat: Var, v: Var },
    CrossEntropy { p: Var, target: usize },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::SoftmaxRows(_) => "softmax",
            Op::SquashRows(_) => "squash",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Mask(..) => "dropout",
            Op::MeanRows(_) => "mean_rows",
            Op::Concat(_) => "concat",
            Op::Reshape(_) => "reshape",
            Op::Row(..) => "row",
            Op::RoutePredict { .. } => "route_predict",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Agreement { .. } => "agreement",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'a, T> {
    params: &'a ParamStore<T>,
    nodes: Vec<Node<'a, T>>,
    checked: bool,
    mutation: Option<Mutation>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (0, 0),
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(128),
            checked: false,
            mutation: None,
        }
    }

    /// Checked mode verifies every op output is finite.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn with_mutation(mut self, mutation: Option<Mutation>) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.value(v).data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::Affine { x, w, b } => self.needs(*x) || self.needs(*w) || self.needs(*b),
            Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::Add(a, b) => self.needs(*a) || self.needs(*b),
            Op::Scale(a, _)
            | Op::SoftmaxRows(a)
            | Op::SquashRows(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Mask(a, _)
            | Op::MeanRows(a)
            | Op::Reshape(a)
            | Op::Row(a, _) => self.needs(*a),
            Op::Concat(vs) => vs.iter().any(|v| self.needs(*v)),
            Op::RoutePredict { u, w } => self.needs(*u) || self.needs(*w),
            Op::WeightedSum { c, uhat } => self.needs(*c) || self.needs(*uhat),
            Op::Agreement { uhat, v } => self.needs(*uhat) || self.needs(*v),
            Op::CrossEntropy { p, .. } => self.needs(*p),
        };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = &self.params.entries()[id.index()].value;
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `y = x·W + b` for `x` of shape `[m]` or `[n, m]`, `W` `[m, k]`, `b` `[k]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        let (n, m) = rows_cols(&xs);
        if ws.len() != 2 || ws[0] != m || xs.len() > 2 || bs != [ws[1]] {
            return Err(Error::dim(format!(
                "affine: x {xs:?}, W {ws:?}, b {bs:?} do not conform"
            )));
        }
        let k = ws[1];
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(self.data(b));
        }
        tensor::matmul_acc(self.data(x), self.data(w), &mut out, n, m, k);
        let shape = if xs.len() == 1 { vec![k] } else { vec![n, k] };
        self.push(Tensor::new(shape, out)?, Op::Affine { x, w, b })
    }

    /// `a·b` for `a` `[m]` or `[n, m]` and `b` `[m, k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        let (n, m) = rows_cols(&as_);
        if bs.len() != 2 || bs[0] != m || as_.len() > 2 {
            return Err(Error::dim(format!("matmul: a {as_:?}, b {bs:?} do not conform")));
        }
        let k = bs[1];
        let mut out = vec![T::zero(); n * k];
        tensor::matmul_acc(self.data(a), self.data(b), &mut out, n, m, k);
        let shape = if as_.len() == 1 { vec![k] } else { vec![n, k] };
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b))
    }

    /// `a·bᵀ` for `a` `[n, m]` and `b` `[k, m]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = rows_cols(self.shape(a));
        let (k, m2) = rows_cols(self.shape(b));
        if m != m2 || m == 0 {
            return Err(Error::dim(format!(
                "matmul_bt: a {:?}, b {:?} do not conform",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); n * k];
        tensor::matmul_bt_acc(self.data(a), self.data(b), &mut out, n, k, m);
        self.push(Tensor::new(vec![n, k], out)?, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "add: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data)?, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let data = self.data(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data)?, Op::Scale(a, s))
    }

    /// Softmax over the last axis (each row of a matrix).
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = rows_cols(self.shape(a));
        if n * k == 0 {
            return Err(Error::dim("softmax over an empty or >2-d tensor"));
        }
        let mut out = vec![T::zero(); n * k];
        for (src, dst) in self.data(a).chunks(k).zip(out.chunks_mut(k)) {
            tensor::softmax_into(src, dst);
        }
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::SoftmaxRows(a))
    }

    /// Capsule squash applied to each row.
    pub fn squash_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = rows_cols(self.shape(a));
        if n * k == 0 {
            return Err(Error::dim("squash over an empty or >2-d tensor"));
        }
        let mut out = vec![T::zero(); n * k];
        for (src, dst) in self.data(a).chunks(k).zip(out.chunks_mut(k)) {
            tensor::squash_into(src, dst);
        }
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::SquashRows(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let data = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data)?, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self.data(a).iter().map(|&x| x.max(T::zero())).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data)?, Op::Relu(a))
    }

    /// Inverted dropout. Eval mode (or rate 0) returns `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        match tensor::dropout_mask::<T, R>(self.value(a).len(), rate, mode, rng)? {
            None => Ok(a),
            Some(mask) => {
                let data = self
                    .data(a)
                    .iter()
                    .zip(&mask)
                    .map(|(&x, &m)| x * m)
                    .collect();
                let shape = self.shape(a).to_vec();
                self.push(Tensor::new(shape, data)?, Op::Mask(a, mask))
            }
        }
    }

    /// Elementwise mean over the rows of `[n, k]`, giving `[k]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = rows_cols(self.shape(a));
        if n * k == 0 {
            return Err(Error::dim("mean_rows over an empty or >2-d tensor"));
        }
        let mut out = vec![T::zero(); k];
        for row in self.data(a).chunks(k) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        let inv = T::one() / T::cst(n as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        self.push(Tensor::new(vec![k], out)?, Op::MeanRows(a))
    }

    /// Flat concatenation into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of nothing"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let n = data.len();
        self.push(Tensor::new(vec![n], data)?, Op::Concat(parts.to_vec()))
    }

    /// Stacks matrices (or vectors as single rows) with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows of nothing"));
        }
        let cols = rows_cols(self.shape(parts[0])).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if c != cols || c == 0 {
                return Err(Error::dim(format!(
                    "concat_rows: column counts {cols} and {c} differ"
                )));
            }
            rows += r;
            data.extend_from_slice(self.data(p));
        }
        self.push(Tensor::new(vec![rows, cols], data)?, Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let data = self.data(a).to_vec();
        let t = Tensor::new(shape.to_vec(), data)
            .map_err(|e| Error::dim(format!("reshape {:?} -> {shape:?}: {e}", self.shape(a))))?;
        self.push(t, Op::Reshape(a))
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let (n, k) = rows_cols(self.shape(a));
        if r >= n {
            return Err(Error::dim(format!("row {r} out of range for {n} rows")));
        }
        let data = self.data(a)[r * k..(r + 1) * k].to_vec();
        self.push(Tensor::new(vec![k], data)?, Op::Row(a, r))
    }

    /// Capsule predictions `û[i, j] = u[i]·W[i, j]` for `u` `[I, d]` and
    /// `W` `[I, K, d, e]`, giving `[I, K, e]`.
    pub fn route_predict(&mut self, u: Var, w: Var) -> Result<Var> {
        let (ni, d) = rows_cols(self.shape(u));
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != ni || ws[2] != d {
            return Err(Error::dim(format!(
                "route_predict: u {:?} and W {ws:?} do not conform",
                self.shape(u)
            )));
        }
        let (k, e) = (ws[1], ws[3]);
        let ud = self.data(u);
        let wd = self.data(w);
        let mut out = vec![T::zero(); ni * k * e];
        for i in 0..ni {
            let ui = &ud[i * d..(i + 1) * d];
            for j in 0..k {
                let wij = &wd[(i * k + j) * d * e..(i * k + j + 1) * d * e];
                let o = &mut out[(i * k + j) * e..(i * k + j + 1) * e];
                tensor::matmul_acc(ui, wij, o, 1, d, e);
            }
        }
        self.push(Tensor::new(vec![ni, k, e], out)?, Op::RoutePredict { u, w })
    }

    /// `s[j] = sum_i c[i, j] · û[i, j]` for `c` `[I, K]`, `û` `[I, K, e]`.
    pub fn weighted_sum(&mut self, c: Var, uhat: Var) -> Result<Var> {
        let us = self.shape(uhat).to_vec();
        if us.len() != 3 || self.shape(c) != [us[0], us[1]] {
            return Err(Error::dim(format!(
                "weighted_sum: c {:?} and û {us:?} do not conform",
                self.shape(c)
            )));
        }
        let (ni, k, e) = (us[0], us[1], us[2]);
        let cd = self.data(c);
        let ud = self.data(uhat);
        let mut out = vec![T::zero(); k * e];
        for i in 0..ni {
            for j in 0..k {
                let cij = cd[i * k + j];
                let src = &ud[(i * k + j) * e..(i * k + j + 1) * e];
                for (o, &x) in out[j * e..(j + 1) * e].iter_mut().zip(src) {
                    *o = *o + cij * x;
                }
            }
        }
        self.push(Tensor::new(vec![k, e], out)?, Op::WeightedSum { c, uhat })
    }

    /// Routing agreement `a[i, j] = û[i, j]·v[j]`.
    pub fn agreement(&mut self, uhat: Var, v: Var) -> Result<Var> {
        let us = self.shape(uhat).to_vec();
        if us.len() != 3 || self.shape(v) != [us[1], us[2]] {
            return Err(Error::dim(format!(
                "agreement: û {us:?} and v {:?} do not conform",
                self.shape(v)
            )));
        }
        let (ni, k, e) = (us[0], us[1], us[2]);
        let ud = self.data(uhat);
        let vd = self.data(v);
        let mut out = vec![T::zero(); ni * k];
        for i in 0..ni {
            for j in 0..k {
                let a = &ud[(i * k + j) * e..(i * k + j + 1) * e];
                let b = &vd[j * e..(j + 1) * e];
                out[i * k + j] = tensor::dot(a, b);
            }
        }
        self.push(Tensor::new(vec![ni, k], out)?, Op::Agreement { uhat, v })
    }

    /// `-log(max(p[target], 1e-12))` as a `[1]` tensor.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var> {
        let c = self.value(p).len();
        if target >= c || self.shape(p).len() != 1 {
            return Err(Error::dim(format!(
                "cross_entropy: target {target} for probabilities {:?}",
                self.shape(p)
            )));
        }
        let pt = self.data(p)[target].max(T::cst(LOG_CLAMP));
        self.push(Tensor::vector(vec![-pt.ln()]), Op::CrossEntropy { p, target })
    }

    /// Cross-entropy against an explicit one-hot vector.
    pub fn cross_entropy_onehot(&mut self, p: Var, onehot: &[T]) -> Result<Var> {
        let target = tensor::check_onehot(onehot, self.value(p).len())?;
        self.cross_entropy(p, target)
    }

    /// Back-propagates from the scalar `loss`, whose gradient is seeded with
    /// `seed`, and returns the gradient of every parameter touched.
    pub fn backward(&self, loss: Var, seed: T) -> Result<Grads<T>> {
        let mut grads = Grads::from_slots(vec![None; self.params.len()]);
        self.backward_into(loss, seed, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into an existing buffer, so one
    /// allocation serves a whole minibatch.
    pub fn backward_into(&self, loss: Var, seed: T, out: &mut Grads<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        if out.slots.len() != self.params.len() {
            return Err(Error::dim(format!(
                "gradient buffer has {} slots for {} parameters",
                out.slots.len(),
                self.params.len()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads, &mut out.slots);
        }
        Ok(())
    }

    /// Gradient buffer of `v`; parameter leaves write straight into their
    /// slot in the output.
    fn acc<'g>(
        &self,
        grads: &'g mut [Option<Vec<T>>],
        slots: &'g mut [Option<Vec<T>>],
        v: Var,
    ) -> Option<&'g mut Vec<T>> {
        if !self.needs(v) {
            return None;
        }
        let len = self.value(v).len();
        let buf = match self.nodes[v.0].op {
            Op::Param(id) => &mut slots[id.index()],
            _ => &mut grads[v.0],
        };
        Some(buf.get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        slots: &mut [Option<Vec<T>>],
    ) {
        let node = &self.nodes[idx];
        let out = match &node.value {
            Value::Owned(t) => t.data(),
            Value::Borrowed(t) => t.data(),
        };
        match &node.op {
            Op::Input => {}
            Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (n, m) = rows_cols(self.shape(*x));
                let k = self.shape(*w)[1];
                if let Some(gb) = self.acc(grads, slots, *b) {
                    for row in g.chunks(k) {
                        for (a, &d) in gb.iter_mut().zip(row) {
                            *a = *a + d;
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, slots, *w) {
                    tensor::matmul_at_acc(self.data(*x), g, gw, n, m, k);
                }
                if let Some(gx) = self.acc(grads, slots, *x) {
                    tensor::matmul_bt_acc(g, self.data(*w), gx, n, m, k);
                }
            }
            Op::MatMul(a, b) => {
                let (n, m) = rows_cols(self.shape(*a));
                let k = self.shape(*b)[1];
                if let Some(gb) = self.acc(grads, slots, *b) {
                    tensor::matmul_at_acc(self.data(*a), g, gb, n, m, k);
                }
                if let Some(ga) = self.acc(grads, slots, *a) {
                    tensor::matmul_bt_acc(g, self.data(*b), ga, n, m, k);
                }
            }
            Op::MatMulBt(a, b) => {
                // out[n×k] = a[n×m]·b[k×m]ᵀ
                let (n, m) = rows_cols(self.shape(*a));
                let k = rows_cols(self.shape(*b)).0;
                if let Some(ga) = self.acc(grads, slots, *a) {
                    tensor::matmul_acc(g, self.data(*b), ga, n, k, m);
                }
                if let Some(gb) = self.acc(grads, slots, *b) {
                    tensor::matmul_at_acc(g, self.data(*a), gb, n, k, m);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, slots, v) {
                        for (x, &d) in gv.iter_mut().zip(g) {
                            *x = *x + d;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x = *x + d * *s;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let k = rows_cols(self.shape(*a)).1;
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for ((y, gr), dst) in out.chunks(k).zip(g.chunks(k)).zip(ga.chunks_mut(k)) {
                        let dot = tensor::dot(y, gr);
                        for ((d, &yi), &gi) in dst.iter_mut().zip(y).zip(gr) {
                            *d = *d + yi * (gi - dot);
                        }
                    }
                }
            }
            Op::SquashRows(a) => {
                let k = rows_cols(self.shape(*a)).1;
                let input = self.data(*a);
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for ((s, gr), dst) in input.chunks(k).zip(g.chunks(k)).zip(ga.chunks_mut(k)) {
                        let sq: T = s.iter().map(|&v| v * v).sum();
                        if sq == T::zero() {
                            continue;
                        }
                        // v = s·f(n), f(n) = n/(1+n²), f'(n) = (1-n²)/(1+n²)²
                        let n = sq.sqrt();
                        let denom = T::one() + sq;
                        let f = n / denom;
                        let fp_over_n = (T::one() - sq) / (denom * denom * n);
                        let sg = tensor::dot(s, gr);
                        for ((d, &si), &gi) in dst.iter_mut().zip(s).zip(gr) {
                            *d = *d + f * gi + fp_over_n * si * sg;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let sign = match self.mutation {
                    Some(Mutation::SignFlip) => -T::one(),
                    None => T::one(),
                };
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for ((d, &y), &gi) in ga.iter_mut().zip(out).zip(g) {
                        *d = *d + sign * gi * (T::one() - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                let input = self.data(*a);
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for ((d, &x), &gi) in ga.iter_mut().zip(input).zip(g) {
                        if x > T::zero() {
                            *d = *d + gi;
                        }
                    }
                }
            }
            Op::Mask(a, mask) => {
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for ((d, &m), &gi) in ga.iter_mut().zip(mask).zip(g) {
                        *d = *d + m * gi;
                    }
                }
            }
            Op::MeanRows(a) => {
                let (n, k) = rows_cols(self.shape(*a));
                let inv = T::one() / T::cst(n as f64);
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for row in ga.chunks_mut(k) {
                        for (d, &gi) in row.iter_mut().zip(g) {
                            *d = *d + gi * inv;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.acc(grads, slots, p) {
                        for (d, &gi) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *d = *d + gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d = *d + gi;
                    }
                }
            }
            Op::Row(a, r) => {
                let k = g.len();
                if let Some(ga) = self.acc(grads, slots, *a) {
                    for (d, &gi) in ga[r * k..(r + 1) * k].iter_mut().zip(g) {
                        *d = *d + gi;
                    }
                }
            }
            Op::RoutePredict { u, w } => {
                let (ni, d) = rows_cols(self.shape(*u));
                let ws = self.shape(*w);
                let (k, e) = (ws[1], ws[3]);
                let ud = self.data(*u);
                let wd = self.data(*w);
                if let Some(gw) = self.acc(grads, slots, *w) {
                    for i in 0..ni {
                        let ui = &ud[i * d..(i + 1) * d];
                        for j in 0..k {
                            let gij = &g[(i * k + j) * e..(i * k + j + 1) * e];
                            let dst = &mut gw[(i * k + j) * d * e..(i * k + j + 1) * d * e];
                            tensor::matmul_at_acc(ui, gij, dst, 1, d, e);
                        }
                    }
                }
                if let Some(gu) = self.acc(grads, slots, *u) {
                    for i in 0..ni {
                        let dst = &mut gu[i * d..(i + 1) * d];
                        for j in 0..k {
                            let gij = &g[(i * k + j) * e..(i * k + j + 1) * e];
                            let wij = &wd[(i * k + j) * d * e..(i * k + j + 1) * d * e];
                            tensor::matmul_bt_acc(gij, wij, dst, 1, d, e);
                        }
                    }
                }
            }
            Op::WeightedSum { c, uhat } => {
                let us = self.shape(*uhat);
                let (ni, k, e) = (us[0], us[1], us[2]);
                let cd = self.data(*c);
                let ud = self.data(*uhat);
                if let Some(gc) = self.acc(grads, slots, *c) {
                    for i in 0..ni {
                        for j in 0..k {
                            let src = &ud[(i * k + j) * e..(i * k + j + 1) * e];
                            let gj = &g[j * e..(j + 1) * e];
                            let dot = tensor::dot(src, gj);
                            gc[i * k + j] = gc[i * k + j] + dot;
                        }
                    }
                }
                if let Some(gu) = self.acc(grads, slots, *uhat) {
                    for i in 0..ni {
                        for j in 0..k {
                            let cij = cd[i * k + j];
                            let gj = &g[j * e..(j + 1) * e];
                            let dst = &mut gu[(i * k + j) * e..(i * k + j + 1) * e];
                            for (dd, &gi) in dst.iter_mut().zip(gj) {
                                *dd = *dd + cij * gi;
                            }
                        }
                    }
                }
            }
            Op::Agreement { uhat, v } => {
                let us = self.shape(*uhat);
                let (ni, k, e) = (us[0], us[1], us[2]);
                let ud = self.data(*uhat);
                let vd = self.data(*v);
                if let Some(gu) = self.acc(grads, slots, *uhat) {
                    for i in 0..ni {
                        for j in 0..k {
                            let gij = g[i * k + j];
                            let vj = &vd[j * e..(j + 1) * e];
                            let dst = &mut gu[(i * k + j) * e..(i * k + j + 1) * e];
                            for (dd, &x) in dst.iter_mut().zip(vj) {
                                *dd = *dd + gij * x;
                            }
                        }
                    }
                }
                if let Some(gv) = self.acc(grads, slots, *v) {
                    for i in 0..ni {
                        for j in 0..k {
                            let gij = g[i * k + j];
                            let src = &ud[(i * k + j) * e..(i * k + j + 1) * e];
                            for (dd, &x) in gv[j * e..(j + 1) * e].iter_mut().zip(src) {
                                *dd = *dd + gij * x;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { p, target } => {
                let pt = self.data(*p)[*target];
                if let Some(gp) = self.acc(grads, slots, *p) {
                    if pt > T::cst(LOG_CLAMP) {
                        gp[*target] = gp[*target] - g[0] / pt;
                    }
                }
            }
        }
    }
}
