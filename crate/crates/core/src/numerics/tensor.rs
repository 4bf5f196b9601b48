use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Mode;
use crate::{Error, Result};

/// Scalar element type. `f32` is the training precision, `f64` the
/// verification precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    /// Lossy constant conversion from `f64`.
    fn cst(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix; vectors are a single row.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap();
                (self.data.len() / c, c)
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::cst(x.to_f64_lossy())).collect(),
        }
    }
}

pub(crate) fn softmax_into<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

pub(crate) fn squash_into<T: Real>(s: &[T], out: &mut [T]) {
    let sq: T = s.iter().map(|&v| v * v).sum();
    if sq == T::zero() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let scale = sq.sqrt() / (T::one() + sq);
    for (o, &v) in out.iter_mut().zip(s) {
        *o = v * scale;
    }
}

pub(crate) fn check_onehot<T: Real>(onehot: &[T], classes: usize) -> Result<usize> {
    if onehot.len() != classes {
        return Err(Error::dim(format!(
            "one-hot target has {} entries, probabilities have {classes}",
            onehot.len()
        )));
    }
    let mut active = None;
    for (i, &y) in onehot.iter().enumerate() {
        if y == T::one() {
            if active.is_some() {
                return Err(Error::invalid("one-hot target has more than one active class"));
            }
            active = Some(i);
        } else if y != T::zero() {
            return Err(Error::invalid("one-hot target entries must be 0 or 1"));
        }
    }
    active.ok_or_else(|| Error::invalid("one-hot target has no active class"))
}

/// Inverted-dropout mask; `None` means identity.
pub(crate) fn dropout_mask<T: Real, R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Option<Vec<T>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(None);
    }
    let keep = T::cst(1.0 / (1.0 - rate));
    Ok(Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    ))
}

// Dense kernels. All matrices are row-major.

/// Dot product with eight interleaved partial sums, so the reduction
/// vectorizes while staying deterministic for a given length.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// out[n×k] += a[n×m] · b[m×k]
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..m {
            let av = a[i * m + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * k..(p + 1) * k];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out[n×m] += g[n×k] · b[m×k]ᵀ
pub(crate) fn matmul_bt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let grow = &g[i * k..(i + 1) * k];
        for p in 0..m {
            let brow = &b[p * k..(p + 1) * k];
            let dot = dot(grow, brow);
            out[i * m + p] = out[i * m + p] + dot;
        }
    }
}

/// out[m×k] += a[n×m]ᵀ · g[n×k]
pub(crate) fn matmul_at_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let grow = &g[i * k..(i + 1) * k];
        for p in 0..m {
            let av = a[i * m + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * k..(p + 1) * k];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}
