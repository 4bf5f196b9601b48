//! Contextual-attention multimodal fusion for informative / non-informative
//! classification of paired text and image embeddings.
//!
//! The pipeline is: modality adapters project raw embeddings into primary
//! capsules, bidirectional cross-modal attention contextualizes them, dynamic
//! routing produces a joint capsule representation, and an Elman recurrent
//! head plus a fully connected layer emit a two-class distribution.
//!
//! All gradients are hand-written on a small reverse-mode tape
//! ([`numerics::Tape`]) and verified against central differences
//! ([`numerics::grad_check`]).

pub mod cli;
pub mod error;
pub mod featurize;
pub mod fusion;
pub mod head;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
