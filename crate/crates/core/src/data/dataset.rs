//! Dataset discovery and loading for `image/` + `mask/` directory layouts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Error, Result};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "tif", "tiff", "jpg", "jpeg"];

/// Mask pixels above this value are foreground.
pub const MASK_THRESHOLD: u8 = 127;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetLayout {
    pub image_subdir: String,
    pub mask_subdir: String,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self {
            image_subdir: "image".into(),
            mask_subdir: "mask".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub task_tag: Option<String>,
}

impl SampleRecord {
    /// File stem shared by the image and its mask.
    pub fn name(&self) -> String {
        file_stem(&self.image_path)
    }
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false)
}

/// Image files in `dir`, keyed (and therefore sorted) by file stem.
fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(DatasetError::MissingDir(dir.to_path_buf()).into());
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if is_image_file(&path) {
            out.insert(file_stem(&path), path);
        }
    }
    Ok(out)
}

fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| {
        DatasetError::Unreadable {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
        .into()
    })
}

pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    scan_dataset_with(root, &DatasetLayout::default())
}

/// Pairs images with masks by file stem, sorted by name. Sub-directories of
/// the image directory are not searched.
pub fn scan_dataset_with(root: impl AsRef<Path>, layout: &DatasetLayout) -> Result<Vec<SampleRecord>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DatasetError::MissingDir(root.to_path_buf()).into());
    }
    let images = list_images(&root.join(&layout.image_subdir))?;
    let mut masks = list_images(&root.join(&layout.mask_subdir))?;
    let task_tag = root.file_name().map(|n| n.to_string_lossy().into_owned());
    let mut records = Vec::with_capacity(images.len());
    for (stem, image_path) in images {
        let mask_path = masks.remove(&stem).ok_or_else(|| DatasetError::Unpaired(image_path.clone()))?;
        let (iw, ih) = dimensions(&image_path)?;
        let (mw, mh) = dimensions(&mask_path)?;
        if (iw, ih) != (mw, mh) {
            return Err(DatasetError::DimensionMismatch {
                path: mask_path,
                image: (iw, ih),
                mask: (mw, mh),
            }
            .into());
        }
        records.push(SampleRecord {
            image_path,
            mask_path,
            width: iw,
            height: ih,
            task_tag: task_tag.clone(),
        });
    }
    if let Some((_, orphan)) = masks.into_iter().next() {
        return Err(DatasetError::Unpaired(orphan).into());
    }
    Ok(records)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| DatasetError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Reads a mask and binarizes it to {0, 1}.
pub fn read_mask(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| DatasetError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut mask = img.to_luma8();
    for p in mask.pixels_mut() {
        p.0[0] = u8::from(p.0[0] > MASK_THRESHOLD);
    }
    Ok(mask)
}

/// A decoded image with its binary mask.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: RgbImage,
    pub mask: GrayImage,
}

impl LoadedSample {
    pub fn load(record: &SampleRecord) -> Result<Self> {
        let image = read_rgb(&record.image_path)?;
        let mask = read_mask(&record.mask_path)?;
        if image.dimensions() != mask.dimensions() {
            return Err(DatasetError::DimensionMismatch {
                path: record.mask_path.clone(),
                image: image.dimensions(),
                mask: mask.dimensions(),
            }
            .into());
        }
        Ok(Self {
            record: record.clone(),
            image,
            mask,
        })
    }

    pub fn foreground_pixels(&self) -> usize {
        self.mask.pixels().filter(|p| p.0[0] != 0).count()
    }
}

pub fn load_all(records: &[SampleRecord]) -> Result<Vec<LoadedSample>> {
    records.par_iter().map(LoadedSample::load).collect()
}

/// Deterministic train/validation split keyed by a hash of each file name.
pub fn split_by_name(records: Vec<SampleRecord>, val_fraction: f64) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
    if val_fraction <= 0.0 {
        return (records, Vec::new());
    }
    let cut = (val_fraction.min(1.0) * 10_000.0).round() as u64;
    records
        .into_iter()
        .partition(|r| crate::seed::derive_seed(0, &r.name()) % 10_000 >= cut)
}
