//! Trainable projections from raw modality vectors to primary capsules.

use serde::{Deserialize, Serialize};

use crate::numerics::{ParamId, ParamStore, Real, Tape, Var};
use crate::{Error, Result};

pub const TEXT_W: &str = "adapter.text.w";
pub const TEXT_B: &str = "adapter.text.b";
pub const IMAGE_W: &str = "adapter.image.w";
pub const IMAGE_B: &str = "adapter.image.b";
pub const TEXT_REFINE: &str = "adapter.text.refine";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

/// Primary capsule count and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapsuleLayout {
    pub count: usize,
    pub dim: usize,
}

impl CapsuleLayout {
    pub fn width(self) -> usize {
        self.count * self.dim
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
}

/// Adapter parameter handles. A modality the configuration ignores has no
/// projection.
#[derive(Debug, Clone, Copy)]
pub struct AdapterParams {
    pub layout: CapsuleLayout,
    pub text: Option<Projection>,
    pub image: Option<Projection>,
    pub refine_text: Option<ParamId>,
}

impl AdapterParams {
    pub fn bind<T: Real>(
        store: &ParamStore<T>,
        layout: CapsuleLayout,
        text_dim: Option<usize>,
        image_dim: Option<usize>,
        refine: bool,
    ) -> Result<Self> {
        let proj = |w: &str, b: &str, d: usize| -> Result<Projection> {
            Ok(Projection {
                w: store.expect(w, &[d, layout.width()])?,
                b: store.expect(b, &[layout.width()])?,
                input_dim: d,
            })
        };
        let text = text_dim.map(|d| proj(TEXT_W, TEXT_B, d)).transpose()?;
        let image = image_dim.map(|d| proj(IMAGE_W, IMAGE_B, d)).transpose()?;
        let refine_text = match (refine, text_dim) {
            (true, Some(d)) => Some(store.expect(TEXT_REFINE, &[d, d])?),
            (true, None) => return Err(Error::Config("text refinement without a text path".into())),
            (false, _) => None,
        };
        Ok(Self { layout, text, image, refine_text })
    }
}

/// Affine map of `raw` to `count·dim` values, reshaped row-major into
/// `[count, dim]` capsules. The text path applies the refinement first.
pub fn adapt<T: Real>(
    tape: &mut Tape<'_, T>,
    params: &AdapterParams,
    raw: Var,
    modality: Modality,
) -> Result<Var> {
    let proj = match modality {
        Modality::Text => params.text,
        Modality::Image => params.image,
    }
    .ok_or_else(|| Error::Config(format!("no {modality:?} adapter in this configuration")))?;
    if tape.shape(raw) != [proj.input_dim] {
        return Err(Error::dim(format!(
            "{modality:?} adapter expects a vector of {} values, got shape {:?}",
            proj.input_dim,
            tape.shape(raw)
        )));
    }
    let mut x = raw;
    if let (Modality::Text, Some(r)) = (modality, params.refine_text) {
        let r = tape.param(r);
        x = tape.matmul(x, r)?;
    }
    let w = tape.param(proj.w);
    let b = tape.param(proj.b);
    let y = tape.affine(x, w, b)?;
    tape.reshape(y, &[params.layout.count, params.layout.dim])
}
