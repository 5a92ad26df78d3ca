//! Checkpoint format: a JSON manifest (`<stem>.json`) listing tensor names
//! and shapes in order, plus a raw blob (`<stem>.bin`) of little-endian
//! 32-bit floats in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

const FORMAT_TAG: &str = "d2cl-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    entries: Vec<ManifestEntry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

/// Write `<stem>.json` + `<stem>.bin`. Values are stored as f32 regardless of
/// the working precision.
pub fn save<F: Real>(
    stem: &Path,
    entries: &[(String, Tensor<F>)],
    meta: &serde_json::Value,
) -> Result<(), NnError> {
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        dtype: "f32".to_string(),
        entries: entries
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta: meta.clone(),
    };
    fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let mut blob = fs::File::create(stem.with_extension("bin"))?;
    let mut buf: Vec<u8> = Vec::new();
    for (_, t) in entries {
        for &v in t.data() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    blob.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint back as `(named tensors, meta)`.
pub fn load(stem: &Path) -> Result<(Vec<(String, Tensor<f32>)>, serde_json::Value), NnError> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    if manifest.format != FORMAT_TAG {
        return Err(NnError::Manifest(format!(
            "unsupported format tag {:?}",
            manifest.format
        )));
    }
    if manifest.dtype != "f32" {
        return Err(NnError::Manifest(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }
    let mut blob = Vec::new();
    fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut blob)?;

    let total: usize = manifest
        .entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if blob.len() != total * 4 {
        return Err(NnError::Manifest(format!(
            "blob holds {} bytes but manifest expects {}",
            blob.len(),
            total * 4
        )));
    }

    let mut tensors = Vec::with_capacity(manifest.entries.len());
    let mut offset = 0;
    for entry in manifest.entries {
        let count: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let bytes: [u8; 4] = blob[offset..offset + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(bytes));
            offset += 4;
        }
        tensors.push((entry.name, Tensor::new(entry.shape, data)));
    }
    Ok((tensors, manifest.meta))
}
