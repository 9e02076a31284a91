//! Dataset directories: `meta.json`, `features.bin`, `labels.bin`.
//!
//! Both binary files share one header, all little-endian:
//!
//! ```text
//! magic   4 bytes  "SSEG"
//! version u32      1
//! ndim    u32
//! dims    u64 × ndim
//! data    f64 (features, dims = images × H × W × F)
//!         i32 (labels,   dims = images × H × W)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, SynthDataset, SynthTaskConfig, NUM_FEATURES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SSEG";
pub const VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    config: SynthTaskConfig,
    height: usize,
    width: usize,
    num_features: usize,
    split: Split,
}

pub fn save(dataset: &SynthDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        format_version: VERSION,
        config: dataset.config.clone(),
        height: dataset.height,
        width: dataset.width,
        num_features: dataset.num_features,
        split: dataset.split.clone(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;

    let n = dataset.num_images() as u64;
    let (h, w) = (dataset.height as u64, dataset.width as u64);

    let mut buf = header(&[n, h, w, dataset.num_features as u64]);
    buf.reserve(dataset.features.len() * 8);
    for v in &dataset.features {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let path = dir.join(FEATURES_FILE);
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;

    let mut buf = header(&[n, h, w]);
    for &k in &dataset.labels {
        buf.extend_from_slice(&(k as i32).to_le_bytes());
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<SynthDataset> {
    let meta_path = dir.join(META_FILE);
    let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_slice(&bytes)?;
    if meta.format_version != VERSION {
        return Err(format_err(
            &meta_path,
            format!("unsupported version {}", meta.format_version),
        ));
    }
    let n = meta.config.num_images as u64;
    let (h, w) = (meta.height as u64, meta.width as u64);
    if meta.num_features != NUM_FEATURES
        || meta.height != meta.config.image_size
        || meta.width != meta.config.image_size
    {
        return Err(format_err(
            &meta_path,
            "shape fields disagree with the config",
        ));
    }

    let path = dir.join(FEATURES_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let body = read_header(&path, &bytes, &[n, h, w, NUM_FEATURES as u64], 8)?;
    let features = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let path = dir.join(LABELS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let body = read_header(&path, &bytes, &[n, h, w], 4)?;
    let labels = body
        .chunks_exact(4)
        .map(|c| {
            let k = i32::from_le_bytes(c.try_into().expect("4-byte chunk"));
            u32::try_from(k).map_err(|_| format_err(&path, format!("negative label {k}")))
        })
        .collect::<Result<Vec<u32>>>()?;

    meta.config.validate()?;
    SynthDataset::from_parts(meta.config, features, labels, meta.split)
}

fn header(dims: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * dims.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

/// Validates the header against the expected dims and returns the payload.
fn read_header<'a>(path: &Path, bytes: &'a [u8], dims: &[u64], elem: usize) -> Result<&'a [u8]> {
    let head_len = 12 + 8 * dims.len();
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(format_err(path, "missing SSEG magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if ndim != dims.len() || bytes.len() < head_len {
        return Err(format_err(
            path,
            format!("expected {} dims, found {ndim}", dims.len()),
        ));
    }
    let found: Vec<u64> = bytes[12..head_len]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if found != dims {
        return Err(format_err(
            path,
            format!("dims {found:?} do not match meta {dims:?}"),
        ));
    }
    let count: u64 = dims.iter().product();
    let body = &bytes[head_len..];
    if body.len() as u64 != count * elem as u64 {
        return Err(format_err(path, "payload length does not match dims"));
    }
    Ok(body)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}
