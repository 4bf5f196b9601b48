use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{Dataset, SampleRecord};
use crate::numerics::rng;
use crate::{Error, Result};

/// How the label relates to the per-modality cluster bits `a` (text) and
/// `b` (image).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthStructure {
    /// label = a
    UnimodalText,
    /// label = b
    UnimodalImage,
    /// label = a XOR b
    Xor,
}

impl SynthStructure {
    pub fn tag(self) -> &'static str {
        match self {
            SynthStructure::UnimodalText => "unimodal-text",
            SynthStructure::UnimodalImage => "unimodal-image",
            SynthStructure::Xor => "xor",
        }
    }
}

impl fmt::Display for SynthStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SynthStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unimodal-text" => Ok(SynthStructure::UnimodalText),
            "unimodal-image" => Ok(SynthStructure::UnimodalImage),
            "xor" => Ok(SynthStructure::Xor),
            other => Err(Error::invalid(format!(
                "unknown structure `{other}` (expected unimodal-text, unimodal-image or xor)"
            ))),
        }
    }
}

fn unit_vector(r: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Synthetic paired dataset. Each modality has two antipodal unit-norm
/// cluster centers (distance 2); embeddings are a center plus isotropic
/// Gaussian noise. Classes are balanced to within one record.
pub fn synth_generate(
    n: usize,
    d_text: usize,
    d_image: usize,
    structure: SynthStructure,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 records, got {n}")));
    }
    if d_text < 2 || d_image < 2 {
        return Err(Error::invalid(format!(
            "embedding dims must be >= 2, got {d_text}/{d_image}"
        )));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::invalid(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let text_center = unit_vector(&mut rng::stream(seed, "synth/center/text"), d_text);
    let image_center = unit_vector(&mut rng::stream(seed, "synth/center/image"), d_image);

    let mut labels: Vec<u8> = (0..n).map(|i| (i >= n / 2) as u8).collect();
    labels.shuffle(&mut rng::stream(seed, "synth/labels"));

    let mut bits = rng::stream(seed, "synth/bits");
    let mut noise = rng::stream(seed, "synth/noise");
    let gauss = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut embed = |center: &[f64], bit: u8| -> Vec<f64> {
        let sign = if bit == 1 { 1.0 } else { -1.0 };
        center
            .iter()
            .map(|&c| sign * c + if noise_sigma > 0.0 { gauss.sample(&mut noise) } else { 0.0 })
            .collect()
    };

    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let free: u8 = bits.gen_range(0..=1);
            let (a, b) = match structure {
                SynthStructure::UnimodalText => (label, free),
                SynthStructure::UnimodalImage => (free, label),
                SynthStructure::Xor => (free, free ^ label),
            };
            SampleRecord {
                id: format!("synth-{i:05}"),
                label,
                text_embedding: embed(&text_center, a),
                image_embedding: embed(&image_center, b),
                raw_text: None,
            }
        })
        .collect();
    Dataset::new(format!("synth-{structure}-n{n}-s{seed}"), records)
}
