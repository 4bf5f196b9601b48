use rand::seq::index::sample;
use serde::Serialize;

use super::params::{ParamId, ParamStore};
use super::rng;
use super::tape::{Mutation, Tape, Var};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Tensors with at most this many elements are checked exhaustively.
    pub exhaustive_limit: usize,
    /// Elements sampled from larger tensors (at least 200).
    pub subsample: usize,
    pub seed: u64,
    /// Backward corruption applied to the analytic pass only.
    pub mutation: Option<Mutation>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            exhaustive_limit: 512,
            subsample: 256,
            seed: 7,
            mutation: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Set when a perturbed loss was not finite.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.tensors
            .iter()
            .all(|t| t.failure.is_none() && t.max_rel_error < tolerance)
    }

    pub fn failing(&self, tolerance: f64) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.failure.is_some() || !(t.max_rel_error < tolerance))
            .collect()
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar built by `loss_fn` against central
/// differences on every parameter of `store` (sampling large tensors).
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    opts: &GradCheckOptions,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store).checked(true).with_mutation(opts.mutation);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss, 1.0)?
    };

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.data(loss)[0])
    };

    let mut work = store.clone();
    let mut tensors = Vec::with_capacity(store.len());
    for (i, entry) in store.entries().iter().enumerate() {
        let id = ParamId(i);
        let n = entry.value.len();
        let indices: Vec<usize> = if n <= opts.exhaustive_limit {
            (0..n).collect()
        } else {
            let mut r = rng::stream(opts.seed, &format!("gradcheck/{}", entry.name));
            let mut idx = sample(&mut r, n, opts.subsample.max(200).min(n)).into_vec();
            idx.sort_unstable();
            idx
        };
        let grad = analytic.get(id);
        let mut check = TensorCheck {
            name: entry.name.clone(),
            elements: n,
            checked: indices.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            failure: None,
        };
        for &k in &indices {
            let orig = entry.value.data()[k];
            work.value_mut(id).data_mut()[k] = orig + opts.step;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - opts.step;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                check.failure = Some(format!("non-finite loss perturbing {}[{k}]", entry.name));
                check.max_rel_error = f64::INFINITY;
                check.worst_index = k;
                break;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.map_or(0.0, |g| g[k]);
            let err = relative_error(a, numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = k;
            }
        }
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
    })
}
