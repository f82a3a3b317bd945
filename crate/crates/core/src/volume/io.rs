//! Two-file volume format: a TOML header plus a raw little-endian data file.
//!
//! ```toml
//! dims = [64, 64, 64]
//! spacing_mm = [1.0, 1.0, 1.0]
//! origin_mm = [0.0, 0.0, 0.0]
//! dtype = "u8"
//! data_file = "labels.raw"
//! num_classes = 3
//! ```
//!
//! `u8` with `num_classes` is a label volume, `f32` with `num_classes` a
//! channel-last probability volume, anything without `num_classes` an
//! intensity volume (converted to `f32` on load).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabelVolume, ProbabilityVolume, Volume, VolumeGeometry};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    I16,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 => 2,
            DType::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: [usize; 3],
    #[serde(alias = "spacing")]
    pub spacing_mm: [f64; 3],
    #[serde(default, alias = "origin")]
    pub origin_mm: [f64; 3],
    pub dtype: DType,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<bool>,
}

/// Any of the three grid kinds, as loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Grid {
    Intensity(Volume),
    Labels(LabelVolume),
    Probabilities(ProbabilityVolume),
}

impl Grid {
    pub fn geometry(&self) -> &VolumeGeometry {
        match self {
            Grid::Intensity(v) => &v.geometry,
            Grid::Labels(v) => &v.geometry,
            Grid::Probabilities(v) => &v.geometry,
        }
    }
}

impl From<Volume> for Grid {
    fn from(v: Volume) -> Self {
        Grid::Intensity(v)
    }
}

impl From<LabelVolume> for Grid {
    fn from(v: LabelVolume) -> Self {
        Grid::Labels(v)
    }
}

impl From<ProbabilityVolume> for Grid {
    fn from(v: ProbabilityVolume) -> Self {
        Grid::Probabilities(v)
    }
}

fn header_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Header {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn data_path(header_path: &Path, data_file: &str) -> PathBuf {
    match header_path.parent() {
        Some(dir) => dir.join(data_file),
        None => PathBuf::from(data_file),
    }
}

pub fn read_volume(header_path: impl AsRef<Path>) -> Result<Grid> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: Header =
        toml::from_str(&text).map_err(|e| header_err(header_path, e.to_string()))?;
    let geometry = VolumeGeometry::new(header.dims, header.spacing_mm, header.origin_mm)
        .map_err(|e| header_err(header_path, e.to_string()))?;

    let raw_path = data_path(header_path, &header.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let channels = match (header.dtype, header.num_classes) {
        (DType::F32, Some(k)) => k,
        _ => 1,
    };
    let expected = (geometry.len() * channels * header.dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected,
            found: bytes.len() as u64,
        });
    }

    match (header.dtype, header.num_classes) {
        (DType::U8, Some(k)) => Ok(Grid::Labels(LabelVolume::new(geometry, bytes, k)?)),
        (DType::I16, Some(k)) => {
            let mut labels = Vec::with_capacity(geometry.len());
            for (index, chunk) in bytes.chunks_exact(2).enumerate() {
                let value = i16::from_le_bytes([chunk[0], chunk[1]]);
                if value < 0 || value as usize >= k.min(256) {
                    return Err(Error::LabelOutOfRange {
                        value: value as u32,
                        index,
                        num_classes: k,
                    });
                }
                labels.push(value as u8);
            }
            Ok(Grid::Labels(LabelVolume::new(geometry, labels, k)?))
        }
        (DType::F32, Some(k)) => {
            let probs = decode_f32(&bytes);
            let normalized = header.normalized.unwrap_or(false);
            Ok(Grid::Probabilities(ProbabilityVolume::new(geometry, probs, k, normalized)?))
        }
        (DType::U8, None) => Ok(Grid::Intensity(Volume::new(
            geometry,
            bytes.iter().map(|&b| f32::from(b)).collect(),
        )?)),
        (DType::I16, None) => Ok(Grid::Intensity(Volume::new(
            geometry,
            bytes
                .chunks_exact(2)
                .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])))
                .collect(),
        )?)),
        (DType::F32, None) => Ok(Grid::Intensity(Volume::new(geometry, decode_f32(&bytes))?)),
    }
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_intensity(header_path: impl AsRef<Path>) -> Result<Volume> {
    let path = header_path.as_ref();
    match read_volume(path)? {
        Grid::Intensity(v) => Ok(v),
        _ => Err(header_err(path, "expected an intensity volume")),
    }
}

pub fn read_labels(header_path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = header_path.as_ref();
    match read_volume(path)? {
        Grid::Labels(v) => Ok(v),
        _ => Err(header_err(path, "expected a label volume (integer dtype with num_classes)")),
    }
}

pub fn read_probabilities(header_path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    let path = header_path.as_ref();
    match read_volume(path)? {
        Grid::Probabilities(v) => Ok(v),
        _ => Err(header_err(path, "expected a probability volume (f32 with num_classes)")),
    }
}

/// Writes `<stem>.raw` next to the header, then the header itself.
pub fn write_volume(grid: impl Into<Grid>, header_path: impl AsRef<Path>) -> Result<()> {
    let grid = grid.into();
    let header_path = header_path.as_ref();
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| header_err(header_path, "header path has no usable file name"))?;
    let data_file = format!("{stem}.raw");
    let geometry = grid.geometry().clone();

    let (dtype, num_classes, normalized, bytes) = match &grid {
        Grid::Intensity(v) => (DType::F32, None, None, encode_f32(&v.data)),
        Grid::Labels(v) => (DType::U8, Some(v.num_classes), None, v.labels.clone()),
        Grid::Probabilities(v) => (
            DType::F32,
            Some(v.num_classes),
            Some(v.normalized),
            encode_f32(&v.probs),
        ),
    };
    let header = Header {
        dims: geometry.dims,
        spacing_mm: geometry.spacing_mm,
        origin_mm: geometry.origin_mm,
        dtype,
        data_file: data_file.clone(),
        num_classes,
        normalized,
    };

    let raw_path = data_path(header_path, &data_file);
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    let text = toml::to_string(&header).map_err(|e| header_err(header_path, e.to_string()))?;
    fs::write(header_path, text).map_err(|e| Error::io(header_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_minimal_f32_volume() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("v.toml");
        fs::write(
            &hdr,
            "dims = [2, 2, 2]\ndtype = \"f32\"\nspacing = [1, 1, 1]\ndata_file = \"v.raw\"\n",
        )
        .unwrap();
        fs::write(dir.path().join("v.raw"), vec![0u8; 32]).unwrap();
        let v = read_intensity(&hdr).unwrap();
        assert_eq!(v.data.len(), 8);
    }

    #[test]
    fn short_raw_file_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("v.toml");
        fs::write(
            &hdr,
            "dims = [2, 2, 2]\ndtype = \"f32\"\nspacing_mm = [1, 1, 1]\ndata_file = \"v.raw\"\n",
        )
        .unwrap();
        fs::write(dir.path().join("v.raw"), vec![0u8; 16]).unwrap();
        match read_volume(&hdr) {
            Err(Error::SizeMismatch { expected, found, .. }) => {
                assert_eq!((expected, found), (32, 16));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("l.toml");
        fs::write(
            &hdr,
            "dims = [2, 1, 1]\ndtype = \"u8\"\nspacing_mm = [1, 1, 1]\ndata_file = \"l.raw\"\nnum_classes = 2\n",
        )
        .unwrap();
        fs::write(dir.path().join("l.raw"), [0u8, 2]).unwrap();
        assert!(matches!(
            read_volume(&hdr),
            Err(Error::LabelOutOfRange { value: 2, index: 1, .. })
        ));
    }

    #[test]
    fn malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("bad.toml");
        fs::write(&hdr, "dims = [2, 2]\n").unwrap();
        assert!(matches!(read_volume(&hdr), Err(Error::Header { .. })));
    }

    #[test]
    fn probability_raw_size() {
        let dir = tempfile::tempdir().unwrap();
        let geometry = VolumeGeometry::unit([3, 2, 2]);
        let probs = vec![0.25f32; geometry.len() * 4];
        let pv = ProbabilityVolume::new(geometry, probs, 4, true).unwrap();
        let hdr = dir.path().join("p.toml");
        write_volume(pv.clone(), &hdr).unwrap();
        let len = fs::metadata(dir.path().join("p.raw")).unwrap().len();
        assert_eq!(len, 3 * 2 * 2 * 4 * 4);
        assert_eq!(read_probabilities(&hdr).unwrap(), pv);
    }

    #[test]
    fn write_into_missing_directory_fails() {
        let v = Volume::filled(VolumeGeometry::unit([1, 1, 1]), 1.0);
        let err = write_volume(v, "/nonexistent-dir/for/sure/v.toml").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
