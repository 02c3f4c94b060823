//! Attribution-map persistence: a raw little-endian float blob next to a
//! JSON sidecar, so metric recomputation sees exact stored values rather
//! than a quantized image.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMap;
use crate::error::{AttributionError, Result};

/// Metadata stored beside the float blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub height: usize,
    pub width: usize,
    pub class_index: usize,
    /// Method descriptor as reported by the attribution call.
    pub method: String,
    /// Model identifier the map was computed on.
    pub model: String,
    /// Full plan descriptor (bits, steps, target layer).
    pub plan: String,
    /// RFC 3339 creation timestamp.
    pub created: String,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

/// Write `map` as `base.bin` (32-bit little-endian floats, row-major) plus
/// `base.json`. Values are stored in single precision; loading restores the
/// stored values exactly.
pub fn save_map(base: &Path, map: &AttributionMap, model: &str, plan: &str) -> Result<()> {
    let (bin_path, json_path) = paths(base);
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut bytes = Vec::with_capacity(map.values.len() * 4);
    for &v in map.values.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let sidecar = MapSidecar {
        height: map.values.nrows(),
        width: map.values.ncols(),
        class_index: map.class_index,
        method: map.method_tag.clone(),
        model: model.to_string(),
        plan: plan.to_string(),
        created: chrono::Utc::now().to_rfc3339(),
    };
    fs::write(&bin_path, &bytes)?;
    fs::write(&json_path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Read `base.bin` + `base.json` back into an attribution map and its
/// sidecar. A blob whose length disagrees with the sidecar is rejected.
pub fn load_map(base: &Path) -> Result<(AttributionMap, MapSidecar)> {
    let (bin_path, json_path) = paths(base);
    let sidecar: MapSidecar = serde_json::from_slice(&fs::read(&json_path)?)?;
    let bytes = fs::read(&bin_path)?;
    let want = sidecar
        .height
        .checked_mul(sidecar.width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| {
            AttributionError::CorruptArchive(format!(
                "{}: sidecar dimensions overflow",
                json_path.display()
            ))
        })?;
    if bytes.len() != want {
        return Err(AttributionError::CorruptArchive(format!(
            "{}: blob holds {} bytes but the sidecar promises {want}",
            bin_path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let values = Array2::from_shape_vec((sidecar.height, sidecar.width), values)
        .expect("length checked against dimensions");
    Ok((
        AttributionMap {
            values,
            class_index: sidecar.class_index,
            method_tag: sidecar.method.clone(),
            raw_pre_resize: None,
        },
        sidecar,
    ))
}
