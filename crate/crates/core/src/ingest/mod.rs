//! Paired text/image embedding datasets: JSONL manifests, stratified splits,
//! epoch batching and synthetic generators with controlled label structure.

mod batch;
mod manifest;
mod record;
mod split;
mod synth;

pub use batch::{batch_indices, BatchIter};
pub use manifest::{load_manifest, read_manifest_lines, write_manifest, ManifestLine};
pub use record::{Dataset, SampleRecord};
pub use split::{split, SplitSpec};
pub use synth::{synth_generate, SynthStructure};
