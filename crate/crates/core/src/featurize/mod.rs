//! Raw modality features: prompt composition, text variants, embedding
//! providers and the trainable adapters that turn raw vectors into primary
//! capsules.

pub mod adapter;
mod prompt;
pub mod provider;
mod text;
mod variants;

pub use adapter::{adapt, AdapterParams, CapsuleLayout, Modality};
pub use prompt::{compose_prompt, PromptTemplate, DEFAULT_TEMPLATE};
pub use provider::{mock_embed, EmbeddingProvider, HttpProvider, MockProvider};
pub use text::{featurize_lines, text_features, TextMode};
pub use variants::{generate_variants, TRUNCATE_TOKENS};
