//! Cross-modal contextual attention, dynamic routing and the fused
//! representation handed to the head.

use crate::numerics::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

pub const T2I: &str = "attention.t2i";
pub const I2T: &str = "attention.i2t";
pub const ROUTING_W: &str = "routing.w";

/// Query, key and value maps for one attention direction.
#[derive(Debug, Clone, Copy)]
pub struct Projections {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl Projections {
    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, d: usize) -> Result<Self> {
        let get = |s: &str| store.expect(&format!("{prefix}.{s}"), &[d, d]);
        Ok(Self { wq: get("wq")?, wk: get("wk")?, wv: get("wv")? })
    }
}

/// Both attention directions; the score scale `1/sqrt(d)` is fixed.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub text_to_image: Projections,
    pub image_to_text: Projections,
    pub dim: usize,
}

impl AttentionParams {
    pub fn bind<T: Real>(store: &ParamStore<T>, d: usize) -> Result<Self> {
        Ok(Self {
            text_to_image: Projections::bind(store, T2I, d)?,
            image_to_text: Projections::bind(store, I2T, d)?,
            dim: d,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RoutingConfig {
    pub iterations: usize,
    pub inputs: usize,
    pub input_dim: usize,
    pub outputs: usize,
    pub output_dim: usize,
    /// `[inputs, outputs, input_dim, output_dim]` transforms.
    pub w: ParamId,
}

impl RoutingConfig {
    pub fn bind<T: Real>(
        store: &ParamStore<T>,
        iterations: usize,
        inputs: usize,
        input_dim: usize,
        outputs: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::Config("routing needs at least one iteration".into()));
        }
        let w = store.expect(ROUTING_W, &[inputs, outputs, input_dim, output_dim])?;
        Ok(Self { iterations, inputs, input_dim, outputs, output_dim, w })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub text: Var,
    pub image: Var,
    pub text_to_image: Var,
    pub image_to_text: Var,
}

#[derive(Debug, Clone)]
pub struct Routed {
    /// `[K, d_out]` output capsules.
    pub capsules: Var,
    /// Coupling coefficients `[I, K]` of every iteration, in order.
    pub coefficients: Vec<Var>,
}

/// Tape handles of one fused sample.
#[derive(Debug, Clone)]
pub struct FusionVars {
    pub z: Var,
    pub f: Var,
    pub capsules: Var,
    pub attention: Option<Attended>,
    pub coefficients: Vec<Var>,
}

/// Concrete values of a fused sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput<T> {
    pub z: Vec<T>,
    pub f: Vec<T>,
    pub capsules: Tensor<T>,
    pub attn_text_to_image: Option<Tensor<T>>,
    pub attn_image_to_text: Option<Tensor<T>>,
    /// Final-iteration coupling coefficients.
    pub routing_coefficients: Tensor<T>,
}

impl<T: Real> FusionOutput<T> {
    pub fn read(tape: &Tape<'_, T>, vars: &FusionVars) -> Self {
        let last = *vars.coefficients.last().expect("at least one routing iteration");
        Self {
            z: tape.data(vars.z).to_vec(),
            f: tape.data(vars.f).to_vec(),
            capsules: tape.value(vars.capsules).clone(),
            attn_text_to_image: vars.attention.map(|a| tape.value(a.text_to_image).clone()),
            attn_image_to_text: vars.attention.map(|a| tape.value(a.image_to_text).clone()),
            routing_coefficients: tape.value(last).clone(),
        }
    }
}

/// One attention direction: queries from `from`, keys and values from `to`,
/// residual onto `from`. Returns the attended rows and the `[n_from, n_to]`
/// attention map.
fn attend<T: Real>(
    tape: &mut Tape<'_, T>,
    from: Var,
    to: Var,
    p: &Projections,
    dim: usize,
) -> Result<(Var, Var)> {
    let (wq, wk, wv) = (tape.param(p.wq), tape.param(p.wk), tape.param(p.wv));
    let q = tape.matmul(from, wq)?;
    let k = tape.matmul(to, wk)?;
    let v = tape.matmul(to, wv)?;
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, T::one() / T::cst(dim as f64).sqrt())?;
    let alpha = tape.softmax_rows(scores)?;
    let context = tape.matmul(alpha, v)?;
    Ok((tape.add(from, context)?, alpha))
}

pub fn contextual_attention<T: Real>(
    tape: &mut Tape<'_, T>,
    text: Var,
    image: Var,
    params: &AttentionParams,
) -> Result<Attended> {
    for (name, v) in [("text", text), ("image", image)] {
        let s = tape.shape(v);
        if s.len() != 2 || s[1] != params.dim {
            return Err(Error::dim(format!(
                "{name} capsules {s:?} do not have width {}",
                params.dim
            )));
        }
    }
    let (t_att, t2i) = attend(tape, text, image, &params.text_to_image, params.dim)?;
    let (i_att, i2t) = attend(tape, image, text, &params.image_to_text, params.dim)?;
    Ok(Attended { text: t_att, image: i_att, text_to_image: t2i, image_to_text: i2t })
}

/// Routing by agreement over `u` (`[I, d]`), fully unrolled on the tape.
pub fn dynamic_routing<T: Real>(
    tape: &mut Tape<'_, T>,
    u: Var,
    cfg: &RoutingConfig,
) -> Result<Routed> {
    if cfg.iterations == 0 {
        return Err(Error::Config("routing needs at least one iteration".into()));
    }
    let w = tape.param(cfg.w);
    let uhat = tape.route_predict(u, w)?;
    let mut b = tape.input(Tensor::zeros(&[cfg.inputs, cfg.outputs]))?;
    let mut coefficients = Vec::with_capacity(cfg.iterations);
    let mut v = None;
    for it in 0..cfg.iterations {
        let c = tape.softmax_rows(b)?;
        coefficients.push(c);
        let s = tape.weighted_sum(c, uhat)?;
        let vj = tape.squash_rows(s)?;
        v = Some(vj);
        if it + 1 < cfg.iterations {
            let a = tape.agreement(uhat, vj)?;
            b = tape.add(b, a)?;
        }
    }
    Ok(Routed { capsules: v.expect("iterations >= 1"), coefficients })
}

/// Attention, mean pooling per modality (text first) and routing over the
/// stacked attended capsules.
pub fn fuse<T: Real>(
    tape: &mut Tape<'_, T>,
    text: Var,
    image: Var,
    attn: &AttentionParams,
    route: &RoutingConfig,
) -> Result<FusionVars> {
    let att = contextual_attention(tape, text, image, attn)?;
    let ft = tape.mean_rows(att.text)?;
    let fi = tape.mean_rows(att.image)?;
    let f = tape.concat(&[ft, fi])?;
    let u = tape.concat_rows(&[att.text, att.image])?;
    let routed = dynamic_routing(tape, u, route)?;
    let z = tape.reshape(routed.capsules, &[route.outputs * route.output_dim])?;
    Ok(FusionVars {
        z,
        f,
        capsules: routed.capsules,
        attention: Some(att),
        coefficients: routed.coefficients,
    })
}

/// Single-modality variant: no attention, routing over that modality's
/// capsules, `f` its mean capsule.
pub fn fuse_unimodal<T: Real>(
    tape: &mut Tape<'_, T>,
    caps: Var,
    route: &RoutingConfig,
) -> Result<FusionVars> {
    let f = tape.mean_rows(caps)?;
    let routed = dynamic_routing(tape, caps, route)?;
    let z = tape.reshape(routed.capsules, &[route.outputs * route.output_dim])?;
    Ok(FusionVars {
        z,
        f,
        capsules: routed.capsules,
        attention: None,
        coefficients: routed.coefficients,
    })
}
