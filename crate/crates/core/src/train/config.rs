use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::featurize::{CapsuleLayout, TextMode};
use crate::ingest::SplitSpec;
use crate::model::{Architecture, Variant};
use crate::numerics::AdamConfig;
use crate::{Error, Result};

/// The six compared model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    TextSimple,
    TextPrompt,
    TextPromptVariants,
    TextPromptFinetune,
    ImageOnly,
    Fusion,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::TextSimple,
        AblationMode::TextPrompt,
        AblationMode::TextPromptVariants,
        AblationMode::TextPromptFinetune,
        AblationMode::ImageOnly,
        AblationMode::Fusion,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AblationMode::TextSimple => "text-simple",
            AblationMode::TextPrompt => "text-prompt",
            AblationMode::TextPromptVariants => "text-prompt-variants",
            AblationMode::TextPromptFinetune => "text-prompt-finetune",
            AblationMode::ImageOnly => "image-only",
            AblationMode::Fusion => "fusion",
        }
    }

    /// Row label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            AblationMode::TextSimple => "Text Only (Simple GPT)",
            AblationMode::TextPrompt => "Text Only (GPT, Single Prompt)",
            AblationMode::TextPromptVariants => "Text Only (GPT, Prompt with Varied Text)",
            AblationMode::TextPromptFinetune => "Text Only (GPT, Prompt and Fine-Tuning)",
            AblationMode::ImageOnly => "Image Only (CNN)",
            AblationMode::Fusion => "Contextual-Attention (Ours)",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            AblationMode::ImageOnly => Variant::Image,
            AblationMode::Fusion => Variant::Fusion,
            AblationMode::TextPromptFinetune => Variant::Text { refine: true },
            _ => Variant::Text { refine: false },
        }
    }

    /// Text featurization mode; `None` for image-only.
    pub fn text_mode(self) -> Option<TextMode> {
        match self {
            AblationMode::TextSimple => Some(TextMode::Simple),
            AblationMode::TextPrompt => Some(TextMode::Prompt),
            AblationMode::TextPromptVariants => Some(TextMode::PromptVariants),
            AblationMode::TextPromptFinetune => Some(TextMode::PromptFinetune),
            AblationMode::Fusion => Some(TextMode::Prompt),
            AblationMode::ImageOnly => None,
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| {
                let ids: Vec<&str> = AblationMode::ALL.iter().map(|m| m.id()).collect();
                Error::Config(format!("unknown ablation mode `{s}` (expected one of {})", ids.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub fc_units: usize,
    pub rnn_units: usize,
    pub routing_iterations: usize,
    pub primary_capsules: usize,
    pub primary_dim: usize,
    pub output_capsules: usize,
    pub output_dim: usize,
    pub seed: u64,
    pub ablation_mode: AblationMode,
    pub loss: LossKind,
    pub split: SplitSpec,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 100,
            dropout: 0.5,
            fc_units: 100,
            rnn_units: 30,
            routing_iterations: 3,
            primary_capsules: 8,
            primary_dim: 16,
            output_capsules: 4,
            output_dim: 16,
            seed: 0,
            ablation_mode: AblationMode::Fusion,
            loss: LossKind::CrossEntropy,
            split: SplitSpec::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        self.split.validate()?;
        self.architecture(1, 1).map(|_| ())
    }

    pub fn architecture(&self, d_text: usize, d_image: usize) -> Result<Architecture> {
        self.architecture_for(self.ablation_mode, d_text, d_image)
    }

    pub fn architecture_for(
        &self,
        mode: AblationMode,
        d_text: usize,
        d_image: usize,
    ) -> Result<Architecture> {
        let arch = Architecture {
            d_text,
            d_image,
            primary: CapsuleLayout { count: self.primary_capsules, dim: self.primary_dim },
            out_capsules: self.output_capsules,
            out_dim: self.output_dim,
            routing_iterations: self.routing_iterations,
            rnn_units: self.rnn_units,
            fc_units: self.fc_units,
            dropout: self.dropout,
            variant: mode.variant(),
        };
        arch.validate()?;
        Ok(arch)
    }
}
