//! Model assembly: architecture description, parameter layout and the
//! per-sample forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::featurize::{adapt, adapter, AdapterParams, CapsuleLayout, Modality};
use crate::fusion::{self, AttentionParams, FusionVars, RoutingConfig};
use crate::head::{self, HeadParams, CLASSES};
use crate::ingest::SampleRecord;
use crate::numerics::{Mode, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Which modalities feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Fusion,
    /// Text path only; `refine` adds the trainable refinement matrix.
    Text { refine: bool },
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub d_text: usize,
    pub d_image: usize,
    pub primary: CapsuleLayout,
    pub out_capsules: usize,
    pub out_dim: usize,
    pub routing_iterations: usize,
    pub rnn_units: usize,
    pub fc_units: usize,
    pub dropout: f64,
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn glorot(name: &str, shape: &[usize]) -> Self {
        let n = shape.len();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Glorot { fan_in: shape[n - 2], fan_out: shape[n - 1] },
        }
    }

    fn zeros(name: &str, shape: &[usize]) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init: Init::Zeros }
    }
}

impl Architecture {
    pub fn uses_text(&self) -> bool {
        !matches!(self.variant, Variant::Image)
    }

    pub fn uses_image(&self) -> bool {
        !matches!(self.variant, Variant::Text { .. })
    }

    pub fn refine(&self) -> bool {
        matches!(self.variant, Variant::Text { refine: true })
    }

    fn modalities(&self) -> usize {
        usize::from(self.uses_text()) + usize::from(self.uses_image())
    }

    /// Capsules entering routing.
    pub fn routing_inputs(&self) -> usize {
        self.modalities() * self.primary.count
    }

    /// Width of the pooled vector `f`.
    pub fn pooled_dim(&self) -> usize {
        self.modalities() * self.primary.dim
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d_text", self.d_text),
            ("d_image", self.d_image),
            ("primary_capsules", self.primary.count),
            ("primary_dim", self.primary.dim),
            ("output_capsules", self.out_capsules),
            ("output_dim", self.out_dim),
            ("routing_iterations", self.routing_iterations),
            ("rnn_units", self.rnn_units),
            ("fc_units", self.fc_units),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Every trainable tensor of this architecture.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let width = self.primary.width();
        let dp = self.primary.dim;
        let mut specs = Vec::new();
        if self.uses_text() {
            specs.push(ParamSpec::glorot(adapter::TEXT_W, &[self.d_text, width]));
            specs.push(ParamSpec::zeros(adapter::TEXT_B, &[width]));
            if self.refine() {
                specs.push(ParamSpec {
                    name: adapter::TEXT_REFINE.into(),
                    shape: vec![self.d_text, self.d_text],
                    init: Init::Identity,
                });
            }
        }
        if self.uses_image() {
            specs.push(ParamSpec::glorot(adapter::IMAGE_W, &[self.d_image, width]));
            specs.push(ParamSpec::zeros(adapter::IMAGE_B, &[width]));
        }
        if self.variant == Variant::Fusion {
            for dir in [fusion::T2I, fusion::I2T] {
                for m in ["wq", "wk", "wv"] {
                    specs.push(ParamSpec::glorot(&format!("{dir}.{m}"), &[dp, dp]));
                }
            }
        }
        specs.push(ParamSpec::glorot(
            fusion::ROUTING_W,
            &[self.routing_inputs(), self.out_capsules, dp, self.out_dim],
        ));
        let h = self.rnn_units;
        specs.push(ParamSpec::glorot(head::RNN_WX, &[self.out_dim, h]));
        specs.push(ParamSpec::glorot(head::RNN_WH, &[h, h]));
        specs.push(ParamSpec::zeros(head::RNN_B, &[h]));
        specs.push(ParamSpec::glorot(head::FC_W, &[h + self.pooled_dim(), self.fc_units]));
        specs.push(ParamSpec::zeros(head::FC_B, &[self.fc_units]));
        specs.push(ParamSpec::glorot(head::OUT_W, &[self.fc_units, CLASSES]));
        specs.push(ParamSpec::zeros(head::OUT_B, &[CLASSES]));
        specs
    }
}

/// Parameter handles of a complete model, resolved against one store.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Architecture,
    pub adapter: AdapterParams,
    pub attention: Option<AttentionParams>,
    pub routing: RoutingConfig,
    pub head: HeadParams,
}

pub struct Forward {
    pub probs: Var,
    pub fusion: FusionVars,
}

impl Model {
    pub fn bind<T: Real>(store: &ParamStore<T>, arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_specs().len();
        if store.len() != expected {
            return Err(Error::dim(format!(
                "parameter store has {} tensors, architecture needs {expected}",
                store.len()
            )));
        }
        let dp = arch.primary.dim;
        Ok(Self {
            arch: *arch,
            adapter: AdapterParams::bind(
                store,
                arch.primary,
                arch.uses_text().then_some(arch.d_text),
                arch.uses_image().then_some(arch.d_image),
                arch.refine(),
            )?,
            attention: (arch.variant == Variant::Fusion)
                .then(|| AttentionParams::bind(store, dp))
                .transpose()?,
            routing: RoutingConfig::bind(
                store,
                arch.routing_iterations,
                arch.routing_inputs(),
                dp,
                arch.out_capsules,
                arch.out_dim,
            )?,
            head: HeadParams::bind(
                store,
                arch.out_dim,
                arch.rnn_units,
                arch.pooled_dim(),
                arch.fc_units,
                arch.dropout,
            )?,
        })
    }

    fn embed_input<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        raw: &[f64],
        modality: Modality,
    ) -> Result<Var> {
        let x = tape.input(Tensor::vector(raw.iter().map(|&v| T::cst(v)).collect()))?;
        adapt(tape, &self.adapter, x, modality)
    }

    /// Records the full forward pass of one record.
    pub fn forward<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        record: &SampleRecord,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let fusion = match (self.arch.variant, &self.attention) {
            (Variant::Fusion, Some(attn)) => {
                let t = self.embed_input(tape, &record.text_embedding, Modality::Text)?;
                let i = self.embed_input(tape, &record.image_embedding, Modality::Image)?;
                fusion::fuse(tape, t, i, attn, &self.routing)?
            }
            (Variant::Text { .. }, _) => {
                let t = self.embed_input(tape, &record.text_embedding, Modality::Text)?;
                fusion::fuse_unimodal(tape, t, &self.routing)?
            }
            (Variant::Image, _) => {
                let i = self.embed_input(tape, &record.image_embedding, Modality::Image)?;
                fusion::fuse_unimodal(tape, i, &self.routing)?
            }
            (Variant::Fusion, None) => unreachable!("fusion model bound without attention"),
        };
        let probs = head::predict(tape, fusion.capsules, fusion.f, &self.head, mode, rng)?;
        Ok(Forward { probs, fusion })
    }
}
