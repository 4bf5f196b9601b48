//! Dense tensors, the differentiable operations the architecture needs, the
//! Adam optimizer and a finite-difference gradient oracle.

mod adam;
mod gradcheck;
mod params;
pub mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use params::{Grads, ParamEntry, ParamId, ParamStore};
pub use tape::{Mode, Mutation, Tape, Var, LOG_CLAMP};
pub use tensor::{Real, Tensor};

use crate::{Error, Result};

/// Numerically stable softmax over a plain slice.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::dim("softmax over an empty vector"));
    }
    let mut out = vec![T::zero(); logits.len()];
    tensor::softmax_into(logits, &mut out);
    Ok(out)
}

/// Capsule squash: `s * |s| / (1 + |s|^2)`, zero at the origin.
pub fn squash<T: Real>(s: &[T]) -> Result<Vec<T>> {
    if s.is_empty() {
        return Err(Error::dim("squash over an empty vector"));
    }
    let mut out = vec![T::zero(); s.len()];
    tensor::squash_into(s, &mut out);
    Ok(out)
}

/// Cross-entropy `-sum y_c log(max(p_c, 1e-12))` against a one-hot target.
pub fn cross_entropy<T: Real>(probs: &[T], onehot: &[T]) -> Result<T> {
    tensor::check_onehot(onehot, probs.len())?;
    let total = probs.iter().fold(T::zero(), |a, &p| a + p);
    if (total - T::one()).abs() > T::cst(1e-5) {
        return Err(Error::invalid(format!(
            "probabilities sum to {total:?}, expected 1"
        )));
    }
    let eps = T::cst(LOG_CLAMP);
    Ok(probs
        .iter()
        .zip(onehot)
        .fold(T::zero(), |acc, (&p, &y)| acc - y * p.max(eps).ln()))
}

/// Inverted dropout applied to a plain vector. Eval mode is the identity.
pub fn dropout<T: Real, R: rand::Rng>(
    x: &[T],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<T>> {
    let mask = tensor::dropout_mask::<T, R>(x.len(), rate, mode, rng)?;
    Ok(match mask {
        None => x.to_vec(),
        Some(m) => x.iter().zip(&m).map(|(&a, &b)| a * b).collect(),
    })
}
