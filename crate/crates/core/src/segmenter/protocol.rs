//! File-based plugin exchange.
//!
//! The host writes `manifest.json` and one `f32` little-endian image per slice
//! (row-major, `height` rows of `width` pixels) into an input directory, then
//! runs `<cmd> --input <manifest> --output <dir>`. The plugin writes
//! `probs_<id>.bin` per entry (row-major, channel-last, `height * width * K`
//! `f32` little-endian values) and finally an empty `done` file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiplanar::{SliceBatch, SlicePrediction, ViewGrid};
use crate::volume::io::{decode_f32, encode_f32};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DONE_MARKER: &str = "done";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Relative to the manifest's directory.
    pub image_path: String,
    /// Position of the slice along the grid normal, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_index: Option<usize>,
    /// Training exports only: `u8` labels, same layout as the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
    /// Training exports only: `f32` loss weights, same layout as the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceManifest {
    pub protocol_version: u32,
    pub num_classes: usize,
    pub entries: Vec<ManifestEntry>,
    /// Sampling lattice of the slices. Plugins may ignore it; geometry-aware
    /// oracles need it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ViewGrid>,
}

impl SliceManifest {
    pub fn validate(&self, dir: &Path) -> Result<()> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(protocol_err("", format!("unsupported protocol version {}", self.protocol_version)));
        }
        if self.num_classes == 0 {
            return Err(protocol_err("", "num_classes must be >= 1"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(protocol_err(&e.id, "duplicate id"));
            }
            let path = dir.join(&e.image_path);
            let len = fs::metadata(&path)
                .map_err(|err| protocol_err(&e.id, format!("image {}: {err}", path.display())))?
                .len();
            if len != (e.width * e.height * 4) as u64 {
                return Err(protocol_err(
                    &e.id,
                    format!("image has {len} bytes, expected {}", e.width * e.height * 4),
                ));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SliceManifest =
            serde_json::from_str(&text).map_err(|e| protocol_err("", format!("manifest: {e}")))?;
        manifest.validate(path.parent().unwrap_or(Path::new(".")))?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn protocol_err(id: &str, reason: impl Into<String>) -> Error {
    Error::Protocol {
        id: id.to_string(),
        reason: reason.into(),
    }
}

pub fn slice_id(k: usize) -> String {
    format!("slice_{k:04}")
}

pub fn probs_file_name(id: &str) -> String {
    format!("probs_{id}.bin")
}

/// Writes the batch's image channel as a manifest plus per-slice files into
/// `dir`. Returns the manifest path.
pub fn write_batch(batch: &SliceBatch, num_classes: usize, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = batch.grid.pixels_per_side;
    let mut entries = Vec::with_capacity(batch.len());
    for k in batch.slices.clone() {
        let id = slice_id(k);
        let image_path = format!("{id}.f32");
        let path = dir.join(&image_path);
        fs::write(&path, encode_f32(batch.slice_image(k))).map_err(|e| Error::io(&path, e))?;
        let local = (k - batch.slices.start) * d * d..(k - batch.slices.start + 1) * d * d;
        let label_path = match &batch.labels {
            Some(labels) => {
                let name = format!("{id}.labels.u8");
                let path = dir.join(&name);
                fs::write(&path, &labels[local.clone()]).map_err(|e| Error::io(&path, e))?;
                Some(name)
            }
            None => None,
        };
        let weight_path = match &batch.weights {
            Some(weights) => {
                let name = format!("{id}.weights.f32");
                let path = dir.join(&name);
                fs::write(&path, encode_f32(&weights[local])).map_err(|e| Error::io(&path, e))?;
                Some(name)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id,
            width: d,
            height: d,
            image_path,
            slice_index: Some(k),
            label_path,
            weight_path,
        });
    }
    let manifest = SliceManifest {
        protocol_version: PROTOCOL_VERSION,
        num_classes,
        entries,
        grid: Some(batch.grid.clone()),
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(path)
}

pub fn read_image(manifest_dir: &Path, entry: &ManifestEntry) -> Result<Vec<f32>> {
    let path = manifest_dir.join(&entry.image_path);
    let bytes = fs::read(&path).map_err(|e| protocol_err(&entry.id, format!("{}: {e}", path.display())))?;
    Ok(decode_f32(&bytes))
}

/// Reads and checks one plugin output: exact length, finite, nonnegative.
pub fn read_probs(output_dir: &Path, entry: &ManifestEntry, num_classes: usize) -> Result<Vec<f32>> {
    let path = output_dir.join(probs_file_name(&entry.id));
    let bytes = fs::read(&path).map_err(|e| protocol_err(&entry.id, format!("missing output {}: {e}", path.display())))?;
    let expected = entry.width * entry.height * num_classes * 4;
    if bytes.len() != expected {
        return Err(protocol_err(
            &entry.id,
            format!("output has {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let probs = decode_f32(&bytes);
    if let Some(pos) = probs.iter().position(|p| !p.is_finite()) {
        return Err(protocol_err(&entry.id, format!("non-finite probability at value {pos}")));
    }
    if let Some(pos) = probs.iter().position(|&p| p < 0.0) {
        return Err(protocol_err(&entry.id, format!("negative probability at value {pos}")));
    }
    Ok(probs)
}

pub fn write_probs(output_dir: &Path, id: &str, probs: &[f32]) -> Result<()> {
    let path = output_dir.join(probs_file_name(id));
    fs::write(&path, encode_f32(probs)).map_err(|e| Error::io(&path, e))
}

pub fn write_done(output_dir: &Path) -> Result<()> {
    let path = output_dir.join(DONE_MARKER);
    fs::write(&path, b"").map_err(|e| Error::io(&path, e))
}

/// Black-box check of a finished plugin run: `done` marker present and every
/// entry's output valid. Returns the outputs in manifest order.
pub fn validate_outputs(manifest: &SliceManifest, output_dir: &Path) -> Result<Vec<Vec<f32>>> {
    if !output_dir.join(DONE_MARKER).is_file() {
        return Err(protocol_err("", format!("no `{DONE_MARKER}` marker in {}", output_dir.display())));
    }
    manifest
        .entries
        .iter()
        .map(|e| read_probs(output_dir, e, manifest.num_classes))
        .collect()
}

/// Assembles validated per-slice outputs into a full view prediction.
pub fn assemble_prediction(
    manifest: &SliceManifest,
    outputs: Vec<Vec<f32>>,
    pixels_per_side: usize,
) -> Result<SlicePrediction> {
    let mut pred = SlicePrediction::zeros(pixels_per_side, manifest.num_classes);
    for (entry, probs) in manifest.entries.iter().zip(outputs) {
        let k = entry
            .slice_index
            .ok_or_else(|| protocol_err(&entry.id, "entry has no slice index"))?;
        if entry.width != pixels_per_side || entry.height != pixels_per_side || k >= pixels_per_side {
            return Err(protocol_err(&entry.id, "entry does not match the view grid"));
        }
        pred.slice_mut(k).copy_from_slice(&probs);
    }
    Ok(pred)
}
