use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, WeightsError};
use crate::model::SwinUNet;
use crate::pretrained::manifest::{ManifestEntry, WeightManifest};
use crate::pretrained::table::TranslationTable;

/// Parameters under this prefix are never initialized from an archive: the
/// embedding sees stem features rather than RGB pixels, with a different
/// patch size.
pub const POLICY_SKIP_PREFIX: &str = "patch_embed.";

/// Audit of one pretrained load. The three model-side lists partition the
/// model's parameter inventory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReport {
    /// (model parameter, source tensor) pairs that were copied.
    pub loaded: Vec<(String, String)>,
    pub skipped_by_policy: Vec<String>,
    pub randomly_initialized: Vec<String>,
    /// Archive tensors no parameter consumed.
    pub unused_source: Vec<String>,
}

impl MappingReport {
    pub fn model_side_len(&self) -> usize {
        self.loaded.len() + self.skipped_by_policy.len() + self.randomly_initialized.len()
    }

    pub fn is_loaded(&self, param: &str) -> bool {
        self.loaded.iter().any(|(p, _)| p == param)
    }

    pub fn summary(&self) -> String {
        format!(
            "loaded {} tensors, skipped {} by policy, {} randomly initialized, {} archive tensors unused",
            self.loaded.len(),
            self.skipped_by_policy.len(),
            self.randomly_initialized.len(),
            self.unused_source.len()
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Initializes `model` from a Swin-Tiny archive with the shipped name table.
pub fn map_pretrained(model: &SwinUNet, manifest: &WeightManifest) -> Result<MappingReport> {
    map_pretrained_with(model, manifest, &TranslationTable::swin_tiny())
}

/// Copies every translatable, shape-matching tensor into `model`.
///
/// Nothing is written unless every expected tensor matches its parameter's
/// shape; a mismatch on a tensor the table names is an error.
pub fn map_pretrained_with(
    model: &SwinUNet,
    manifest: &WeightManifest,
    table: &TranslationTable,
) -> Result<MappingReport> {
    let mut report = MappingReport::default();
    let mut plan: Vec<(&str, &ManifestEntry)> = Vec::new();
    for (name, var) in model.params().iter() {
        if name.starts_with(POLICY_SKIP_PREFIX) {
            report.skipped_by_policy.push(name.to_string());
            continue;
        }
        let Some(source) = table.translate(name) else {
            report.randomly_initialized.push(name.to_string());
            continue;
        };
        let Some(entry) = manifest.get(&source) else {
            report.randomly_initialized.push(name.to_string());
            continue;
        };
        if entry.shape != var.dims() {
            return Err(WeightsError::ShapeMismatch {
                param: name.to_string(),
                source_name: source,
                expected: var.dims().to_vec(),
                actual: entry.shape.clone(),
            }
            .into());
        }
        if !entry.dtype.is_float() {
            return Err(WeightsError::DType(format!(
                "`{}` is {}, parameters need a float type",
                entry.name,
                entry.dtype.tag()
            ))
            .into());
        }
        plan.push((name, entry));
        report.loaded.push((name.to_string(), entry.name.clone()));
    }

    let mut reader = manifest.open()?;
    for (name, entry) in plan {
        let tensor = reader.read_tensor(entry)?;
        model.params().assign(name, &tensor)?;
    }

    let used: HashSet<&str> = report.loaded.iter().map(|(_, s)| s.as_str()).collect();
    report.unused_source = manifest
        .entries
        .iter()
        .filter(|e| !used.contains(e.name.as_str()))
        .map(|e| e.name.clone())
        .collect();
    Ok(report)
}
