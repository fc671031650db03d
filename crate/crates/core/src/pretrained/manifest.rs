//! Neutral weight archive: a tab-separated manifest plus a raw little-endian
//! blob.
//!
//! ```text
//! # blob: swin_tiny.bin            (optional; defaults to <manifest>.bin)
//! name<TAB>dtype<TAB>d0,d1,...<TAB>byte_offset
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result, WeightsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    F32,
    F64,
    F16,
    BF16,
    I64,
    I32,
    U8,
}

impl ElementType {
    pub fn parse(tag: &str) -> Option<Self> {
        Some(match tag {
            "f32" => Self::F32,
            "f64" => Self::F64,
            "f16" => Self::F16,
            "bf16" => Self::BF16,
            "i64" => Self::I64,
            "i32" => Self::I32,
            "u8" => Self::U8,
            _ => return None,
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
            Self::F16 => "f16",
            Self::BF16 => "bf16",
            Self::I64 => "i64",
            Self::I32 => "i32",
            Self::U8 => "u8",
        }
    }

    pub fn size(self) -> u64 {
        match self {
            Self::F64 | Self::I64 => 8,
            Self::F32 | Self::I32 => 4,
            Self::F16 | Self::BF16 => 2,
            Self::U8 => 1,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64 | Self::F16 | Self::BF16)
    }

    pub fn candle(self) -> Option<DType> {
        Some(match self {
            Self::F32 => DType::F32,
            Self::F64 => DType::F64,
            Self::F16 => DType::F16,
            Self::BF16 => DType::BF16,
            Self::I64 => DType::I64,
            Self::U8 => DType::U8,
            Self::I32 => return None,
        })
    }

    pub fn from_candle(dtype: DType) -> Option<Self> {
        Some(match dtype {
            DType::F32 => Self::F32,
            DType::F64 => Self::F64,
            DType::F16 => Self::F16,
            DType::BF16 => Self::BF16,
            DType::I64 => Self::I64,
            DType::U8 => Self::U8,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: ElementType,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
}

impl ManifestEntry {
    pub fn byte_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * self.dtype.size()
    }
}

#[derive(Debug, Clone)]
pub struct WeightManifest {
    pub entries: Vec<ManifestEntry>,
    pub blob_path: PathBuf,
    pub total_bytes: u64,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    WeightsError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
    .into()
}

pub fn default_blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

pub fn read_manifest(manifest_path: impl AsRef<Path>) -> Result<WeightManifest> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut blob_path = default_blob_path(path);
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(blob) = comment.trim().strip_prefix("blob:") {
                let blob = Path::new(blob.trim());
                blob_path = match path.parent() {
                    Some(dir) if blob.is_relative() => dir.join(blob),
                    _ => blob.to_path_buf(),
                };
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_error(path, lineno, format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let dtype = ElementType::parse(fields[1])
            .ok_or_else(|| parse_error(path, lineno, format!("unknown dtype `{}`", fields[1])))?;
        let shape = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2]
                .split(',')
                .map(|d| d.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_error(path, lineno, format!("bad shape `{}`: {e}", fields[2])))?
        };
        let byte_offset = fields[3]
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_error(path, lineno, format!("bad byte offset `{}`: {e}", fields[3])))?;
        entries.push(ManifestEntry {
            name: fields[0].to_string(),
            dtype,
            shape,
            byte_offset,
        });
    }
    let manifest = WeightManifest::from_entries(entries, blob_path)?;
    let actual = fs::metadata(&manifest.blob_path)
        .map_err(|e| Error::io(&manifest.blob_path, e))?
        .len();
    if actual != manifest.total_bytes {
        return Err(WeightsError::BlobSize {
            path: manifest.blob_path.clone(),
            expected: manifest.total_bytes,
            actual,
        }
        .into());
    }
    Ok(manifest)
}

impl WeightManifest {
    /// Validates names and layout; entries must be listed in offset order and
    /// tile the blob without gaps.
    pub fn from_entries(entries: Vec<ManifestEntry>, blob_path: PathBuf) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut cursor = 0u64;
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(WeightsError::DuplicateName(e.name.clone()).into());
            }
            if e.byte_offset != cursor {
                return Err(WeightsError::Layout {
                    name: e.name.clone(),
                    offset: e.byte_offset,
                    expected: cursor,
                }
                .into());
            }
            cursor += e.byte_len();
        }
        Ok(Self {
            entries,
            blob_path,
            total_bytes: cursor,
        })
    }

    pub fn get(&self, name: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn open(&self) -> Result<ArchiveReader<'_>> {
        let file = fs::File::open(&self.blob_path).map_err(|e| Error::io(&self.blob_path, e))?;
        Ok(ArchiveReader { manifest: self, file })
    }
}

pub struct ArchiveReader<'a> {
    manifest: &'a WeightManifest,
    file: fs::File,
}

impl ArchiveReader<'_> {
    pub fn read_bytes(&mut self, entry: &ManifestEntry) -> Result<Vec<u8>> {
        let path = &self.manifest.blob_path;
        let mut buf = vec![0u8; entry.byte_len() as usize];
        self.file
            .seek(SeekFrom::Start(entry.byte_offset))
            .map_err(|e| Error::io(path, e))?;
        self.file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(buf)
    }

    pub fn read_tensor(&mut self, entry: &ManifestEntry) -> Result<Tensor> {
        let bytes = self.read_bytes(entry)?;
        let dtype = entry
            .dtype
            .candle()
            .ok_or_else(|| WeightsError::DType(entry.dtype.tag().to_string()))?;
        Ok(Tensor::from_raw_buffer(&bytes, dtype, &entry.shape, &Device::Cpu)?)
    }
}

/// Writes tensors as a manifest + blob pair. The blob is placed next to
/// the manifest with a `.bin` extension.
pub fn write_archive<'a>(
    manifest_path: impl AsRef<Path>,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<WeightManifest> {
    let manifest_path = manifest_path.as_ref();
    let blob_path = default_blob_path(manifest_path);
    let blob = fs::File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut blob = BufWriter::new(blob);
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, tensor) in tensors {
        let dtype = ElementType::from_candle(tensor.dtype())
            .ok_or_else(|| WeightsError::DType(format!("{:?}", tensor.dtype())))?;
        let bytes = tensor_bytes(tensor)?;
        blob.write_all(&bytes).map_err(|e| Error::io(&blob_path, e))?;
        entries.push(ManifestEntry {
            name: name.to_string(),
            dtype,
            shape: tensor.dims().to_vec(),
            byte_offset: offset,
        });
        offset += bytes.len() as u64;
    }
    blob.flush().map_err(|e| Error::io(&blob_path, e))?;
    let mut text = String::new();
    for e in &entries {
        let shape: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        text.push_str(&format!("{}\t{}\t{}\t{}\n", e.name, e.dtype.tag(), shape.join(","), e.byte_offset));
    }
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    WeightManifest::from_entries(entries, blob_path)
}

/// Little-endian bytes of a tensor in row-major order.
pub fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::I64 => flat.to_vec1::<i64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::U8 => flat.to_vec1::<u8>()?,
        other => return Err(WeightsError::DType(format!("{other:?}")).into()),
    })
}
