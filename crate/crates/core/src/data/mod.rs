//! Feature bags, samples, manifests, grouped splits and the synthetic generator.

pub mod bag;
pub mod manifest;
pub mod sample;
pub mod split;
pub mod synth;

pub use bag::{decode_bag, encode_bag, read_bag, write_bag, FeatureBag};
pub use manifest::{load_dataset, load_manifest, load_samples, ManifestEntry};
pub use sample::{ModalityMask, SampleRecord};
pub use split::{make_splits, Part, SplitPlan};
pub use synth::{generate_synthetic, SyntheticDataset, SyntheticSpec, Task};
