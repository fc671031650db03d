//! Pretrained backbone weights: archive format, name translation and the
//! initialization policy.

pub mod manifest;
pub mod mapping;
pub mod reference;
pub mod table;

pub use manifest::{read_manifest, tensor_bytes, write_archive, ElementType, ManifestEntry, WeightManifest};
pub use mapping::{map_pretrained, map_pretrained_with, MappingReport, POLICY_SKIP_PREFIX};
pub use table::TranslationTable;
