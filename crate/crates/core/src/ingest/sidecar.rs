//! Binary feature storage for wide embeddings.
//!
//! `<base>.f32` holds one row per record, vision then text features, as
//! little-endian `f32`. `<base>.idx.json` lists the record ids in row order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::wire::SampleRecord;

/// Feature widths above this go to the binary sidecar by default.
pub const SIDECAR_MIN_DIMS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SidecarIndex {
    dim_vision: usize,
    dim_text: usize,
    ids: Vec<String>,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    let name = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    (
        base.with_file_name(format!("{name}.f32")),
        base.with_file_name(format!("{name}.idx.json")),
    )
}

/// Writes the features of `records` and clears `x1`/`x2` on them.
///
/// Values are narrowed to `f32`.
pub fn write_feature_sidecar(base: &Path, records: &mut [SampleRecord]) -> Result<()> {
    let first = records.first().ok_or_else(|| Error::domain("no records for feature sidecar"))?;
    let (dv, dt) = (first.x1.len(), first.x2.len());
    let mut bytes = Vec::with_capacity(records.len() * (dv + dt) * 4);
    let mut ids = Vec::with_capacity(records.len());
    for r in records.iter_mut() {
        if r.x1.len() != dv || r.x2.len() != dt {
            return Err(Error::format(format!("record '{}' has mismatched feature widths", r.id)));
        }
        for v in r.x1.iter().chain(&r.x2) {
            let f = *v as f32;
            if !f.is_finite() {
                return Err(Error::format(format!("record '{}' feature {v} not representable as f32", r.id)));
            }
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        ids.push(r.id.clone());
        r.x1.clear();
        r.x2.clear();
    }
    let (data, index) = paths(base);
    fs::write(&data, bytes).map_err(|e| Error::io(&data, e))?;
    let idx = SidecarIndex { dim_vision: dv, dim_text: dt, ids };
    fs::write(&index, serde_json::to_vec(&idx).expect("index serializes")).map_err(|e| Error::io(&index, e))
}

/// Fills `x1`/`x2` of `records` from the sidecar at `base`, matching by id.
pub fn attach_feature_sidecar(base: &Path, records: &mut [SampleRecord], dim_vision: usize, dim_text: usize) -> Result<()> {
    let (data, index) = paths(base);
    let idx_text = fs::read(&index).map_err(|e| Error::io(&index, e))?;
    let idx: SidecarIndex = serde_json::from_slice(&idx_text)
        .map_err(|e| Error::format(format!("{}: {e}", index.display())))?;
    if (idx.dim_vision, idx.dim_text) != (dim_vision, dim_text) {
        return Err(Error::format(format!(
            "sidecar dims {}x{} differ from manifest {dim_vision}x{dim_text}",
            idx.dim_vision, idx.dim_text
        )));
    }
    let bytes = fs::read(&data).map_err(|e| Error::io(&data, e))?;
    let width = dim_vision + dim_text;
    if bytes.len() != idx.ids.len() * width * 4 {
        return Err(Error::format(format!(
            "{}: {} bytes, expected {}",
            data.display(),
            bytes.len(),
            idx.ids.len() * width * 4
        )));
    }
    let rows: HashMap<&str, usize> = idx.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    for r in records.iter_mut() {
        let row = *rows
            .get(r.id.as_str())
            .ok_or_else(|| Error::format(format!("record '{}' missing from feature sidecar", r.id)))?;
        let vals: Vec<f64> = bytes[row * width * 4..(row + 1) * width * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        r.x1 = vals[..dim_vision].to_vec();
        r.x2 = vals[dim_vision..].to_vec();
    }
    Ok(())
}
