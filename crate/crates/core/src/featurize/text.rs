use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::prompt::{compose_prompt, PromptTemplate};
use super::provider::EmbeddingProvider;
use super::variants::generate_variants;
use crate::ingest::ManifestLine;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// How tweet text becomes a text feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMode {
    Simple,
    Prompt,
    #[serde(alias = "prompt_variants")]
    PromptVariants,
    #[serde(alias = "prompt_finetune")]
    PromptFinetune,
}

impl TextMode {
    pub const ALL: [TextMode; 4] = [
        TextMode::Simple,
        TextMode::Prompt,
        TextMode::PromptVariants,
        TextMode::PromptFinetune,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            TextMode::Simple => "simple",
            TextMode::Prompt => "prompt",
            TextMode::PromptVariants => "prompt-variants",
            TextMode::PromptFinetune => "prompt-finetune",
        }
    }
}

impl FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        TextMode::ALL
            .into_iter()
            .find(|m| m.tag() == norm)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown text mode `{s}` (expected simple, prompt, prompt-variants or prompt-finetune)"
                ))
            })
    }
}

/// Text feature vector for one tweet. `refine` is the fine-tune refinement
/// matrix (`D×D`, applied as `e·R`); `None` stands for its identity
/// initialization.
pub fn text_features(
    mode: TextMode,
    tpl: &PromptTemplate,
    text: &str,
    provider: &dyn EmbeddingProvider,
    variant_seed: u64,
    refine: Option<&Tensor<f64>>,
) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot featurize empty text"));
    }
    let e = match mode {
        TextMode::Simple => provider.embed(text)?,
        TextMode::Prompt | TextMode::PromptFinetune => provider.embed(&compose_prompt(tpl, text)?)?,
        TextMode::PromptVariants => {
            let prompts = generate_variants(text, variant_seed)
                .iter()
                .map(|v| compose_prompt(tpl, v))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
            let vecs = provider.embed_batch(&refs)?;
            let mut mean = vec![0.0; provider.output_dim()];
            for v in &vecs {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            let n = vecs.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        }
    };
    if e.len() != provider.output_dim() {
        return Err(Error::Provider(format!(
            "{} returned dimension {}, declared {}",
            provider.name(),
            e.len(),
            provider.output_dim()
        )));
    }
    match (mode, refine) {
        (TextMode::PromptFinetune, Some(r)) => {
            let d = e.len();
            if r.shape() != [d, d] {
                return Err(Error::dim(format!(
                    "refinement matrix {:?} does not match embedding dimension {d}",
                    r.shape()
                )));
            }
            let rd = r.data();
            Ok((0..d).map(|j| (0..d).map(|i| e[i] * rd[i * d + j]).sum()).collect())
        }
        _ => Ok(e),
    }
}

/// Fills `text_embedding` of every line from its `raw_text`. The fine-tune
/// mode emits the unrefined prompt embedding; refinement is trained inside
/// the model.
pub fn featurize_lines(
    lines: &mut [ManifestLine],
    mode: TextMode,
    tpl: &PromptTemplate,
    provider: &dyn EmbeddingProvider,
    variant_seed: u64,
) -> Result<()> {
    for line in lines.iter_mut() {
        let text = line.raw_text.as_deref().ok_or_else(|| Error::Record {
            id: line.id.clone(),
            message: "missing raw_text".into(),
        })?;
        let v = text_features(mode, tpl, text, provider, variant_seed, None).map_err(|e| {
            Error::Record {
                id: line.id.clone(),
                message: e.to_string(),
            }
        })?;
        line.text_embedding = Some(v);
    }
    Ok(())
}
