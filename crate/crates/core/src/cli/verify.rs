//! Finite-difference verification of the full model and each module in
//! isolation.

use rand::Rng;
use serde::Serialize;

use crate::featurize::{adapt, adapter, AdapterParams, Modality};
use crate::fusion::{self, AttentionParams, RoutingConfig};
use crate::head::{self, HeadParams};
use crate::ingest::SampleRecord;
use crate::model::{Architecture, Model, Variant};
use crate::numerics::{
    grad_check, rng, GradCheckOptions, Mode, Mutation, ParamStore, Tape, TensorCheck, Tensor, Var,
};
use crate::train::{init_params, TrainConfig};
use crate::Result;

pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct ModuleCheck {
    pub module: String,
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub tolerance: f64,
    pub mutation: Option<String>,
    /// Every tensor of the full model, once each.
    pub tensors: Vec<TensorCheck>,
    pub modules: Vec<ModuleCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl VerifyReport {
    /// Names of tensors at or above tolerance, full model and modules.
    pub fn offending(&self) -> Vec<String> {
        let bad = |t: &TensorCheck| t.failure.is_some() || !(t.max_rel_error < self.tolerance);
        let mut out: Vec<String> = self.tensors.iter().filter(|t| bad(t)).map(|t| t.name.clone()).collect();
        for m in &self.modules {
            out.extend(m.tensors.iter().filter(|t| bad(t)).map(|t| format!("{}:{}", m.module, t.name)));
        }
        out
    }
}

/// Small-input architecture with the default capsule and head sizes.
pub fn verification_arch(variant: Variant) -> Architecture {
    let mut arch = TrainConfig::default().architecture(12, 20).expect("default config is valid");
    arch.variant = variant;
    arch
}

fn random_input(seed: u64, name: &str, shape: &[usize]) -> Tensor<f64> {
    let mut r = rng::stream(seed, name);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
        .expect("shape matches length")
}

fn record(seed: u64, arch: &Architecture) -> SampleRecord {
    SampleRecord {
        id: "gradcheck".into(),
        label: 1,
        text_embedding: random_input(seed, "verify/text", &[arch.d_text]).into_data(),
        image_embedding: random_input(seed, "verify/image", &[arch.d_image]).into_data(),
        raw_text: None,
    }
}

fn substore(full: &ParamStore<f64>, prefix: &str) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for e in full.entries().iter().filter(|e| e.name.starts_with(prefix)) {
        s.insert(e.name.clone(), e.value.clone())?;
    }
    Ok(s)
}

/// Scalar probe `c·tanh(x)` with a fixed random `c`, so every output
/// element carries a distinct nonzero weight.
fn probe(tape: &mut Tape<'_, f64>, x: Var, seed: u64, name: &str) -> Result<Var> {
    let n = tape.value(x).len();
    let flat = tape.reshape(x, &[n])?;
    let t = tape.tanh(flat)?;
    let c = tape.input(random_input(seed, name, &[n, 1]))?;
    tape.matmul(t, c)
}

fn check_module<F>(name: &str, store: &ParamStore<f64>, opts: &GradCheckOptions, f: F) -> Result<ModuleCheck>
where
    F: for<'t> Fn(&mut Tape<'t, f64>) -> Result<Var>,
{
    let r = grad_check(store, opts, f)?;
    Ok(ModuleCheck { module: name.into(), max_rel_error: r.max_rel_error, tensors: r.tensors })
}

pub fn run_verification(seed: u64, mutation: Option<Mutation>) -> Result<VerifyReport> {
    let opts = GradCheckOptions { seed, mutation, ..Default::default() };
    let arch = verification_arch(Variant::Fusion);
    let store = init_params::<f64>(&arch, seed)?;
    let model = Model::bind(&store, &arch)?;
    let rec = record(seed, &arch);
    let full = grad_check(&store, &opts, |tape| {
        let out = model.forward(tape, &rec, Mode::Eval, &mut rng::seeded(0))?;
        tape.cross_entropy(out.probs, rec.label as usize)
    })?;

    let mut modules = Vec::new();
    let dp = arch.primary.dim;

    // adapters, including the text refinement of the fine-tune variant
    let tarch = verification_arch(Variant::Text { refine: true });
    let mut astore = substore(&init_params::<f64>(&tarch, seed)?, "adapter.")?;
    for e in substore(&store, adapter::IMAGE_W)?.entries().iter().chain(substore(&store, adapter::IMAGE_B)?.entries()) {
        astore.insert(e.name.clone(), e.value.clone())?;
    }
    // perturb the identity so the refinement is exercised off its fixed point
    let rid = astore.id(adapter::TEXT_REFINE)?;
    let noise = random_input(seed, "verify/refine", astore.value(rid).shape());
    for (v, n) in astore.value_mut(rid).data_mut().iter_mut().zip(noise.data()) {
        *v += 0.1 * n;
    }
    let ap = AdapterParams::bind(&astore, arch.primary, Some(arch.d_text), Some(arch.d_image), true)?;
    modules.push(check_module("adapter", &astore, &opts, |tape| {
        let t = tape.input(Tensor::vector(rec.text_embedding.clone()))?;
        let i = tape.input(Tensor::vector(rec.image_embedding.clone()))?;
        let tc = adapt(tape, &ap, t, Modality::Text)?;
        let ic = adapt(tape, &ap, i, Modality::Image)?;
        let both = tape.concat_rows(&[tc, ic])?;
        probe(tape, both, seed, "verify/probe-adapter")
    })?);

    let caps_shape = [arch.primary.count, dp];
    let tcaps = random_input(seed, "verify/tcaps", &caps_shape);
    let icaps = random_input(seed, "verify/icaps", &caps_shape);

    let sstore = substore(&store, "attention.")?;
    let attn = AttentionParams::bind(&sstore, dp)?;
    modules.push(check_module("attention", &sstore, &opts, |tape| {
        let t = tape.input(tcaps.clone())?;
        let i = tape.input(icaps.clone())?;
        let a = fusion::contextual_attention(tape, t, i, &attn)?;
        let both = tape.concat_rows(&[a.text, a.image])?;
        probe(tape, both, seed, "verify/probe-attention")
    })?);

    let rstore = substore(&store, fusion::ROUTING_W)?;
    let route = RoutingConfig::bind(
        &rstore,
        arch.routing_iterations,
        arch.routing_inputs(),
        dp,
        arch.out_capsules,
        arch.out_dim,
    )?;
    let u = random_input(seed, "verify/u", &[arch.routing_inputs(), dp]);
    modules.push(check_module("routing", &rstore, &opts, |tape| {
        let u = tape.input(u.clone())?;
        let r = fusion::dynamic_routing(tape, u, &route)?;
        probe(tape, r.capsules, seed, "verify/probe-routing")
    })?);

    let hstore = substore(&store, "head.")?;
    let hp = HeadParams::bind(&hstore, arch.out_dim, arch.rnn_units, arch.pooled_dim(), arch.fc_units, arch.dropout)?;
    let caps = random_input(seed, "verify/caps", &[arch.out_capsules, arch.out_dim]).data().iter().map(|x| 0.5 * x).collect::<Vec<_>>();
    let caps = Tensor::new(vec![arch.out_capsules, arch.out_dim], caps)?;
    let f = random_input(seed, "verify/f", &[arch.pooled_dim()]);
    modules.push(check_module("head", &hstore, &opts, |tape| {
        let c = tape.input(caps.clone())?;
        let f = tape.input(f.clone())?;
        let p = head::predict(tape, c, f, &hp, Mode::Eval, &mut rng::seeded(0))?;
        tape.cross_entropy(p, 1)
    })?);

    let max_rel_error = modules
        .iter()
        .map(|m| m.max_rel_error)
        .fold(full.max_rel_error, f64::max);
    let mut report = VerifyReport {
        seed,
        tolerance: TOLERANCE,
        mutation: mutation.map(|m| format!("{m:?}")),
        tensors: full.tensors,
        modules,
        max_rel_error,
        passed: false,
    };
    report.passed = report.offending().is_empty();
    Ok(report)
}

