//! Grid types shared by the whole pipeline.
//!
//! All grids store voxels with the first index fastest: the linear index of
//! `(i, j, k)` is `i + nx * (j + ny * k)`. Geometry is axis-aligned; oriented
//! sampling is handled by [`crate::multiplanar::ViewGrid`].

pub(crate) mod io;
mod sample;

pub use io::{
    read_intensity, read_labels, read_probabilities, read_volume, write_volume, DType, Grid, Header,
};
pub use sample::nearest_index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Physical position of the center of voxel `(0, 0, 0)`.
    pub origin_mm: [f64; 3],
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        let geometry = Self {
            dims,
            spacing_mm,
            origin_mm,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Unit spacing, origin at zero.
    pub fn unit(dims: [usize; 3]) -> Self {
        Self {
            dims,
            spacing_mm: [1.0; 3],
            origin_mm: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Geometry(format!("dims {:?} must all be >= 1", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Geometry(format!(
                "spacing {:?} must be finite and positive",
                self.spacing_mm
            )));
        }
        if self.origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry(format!("origin {:?} must be finite", self.origin_mm)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn physical_position(&self, ijk: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin_mm[a] + ijk[a] as f64 * self.spacing_mm[a])
    }

    /// Continuous index coordinates of a physical point.
    pub fn continuous_index(&self, point_mm: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (point_mm[a] - self.origin_mm[a]) / self.spacing_mm[a])
    }

    /// Physical center of the voxel lattice.
    pub fn center_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| {
            self.origin_mm[a] + (self.dims[a] as f64 - 1.0) * 0.5 * self.spacing_mm[a]
        })
    }

    /// Per-axis physical extent, `dims * spacing`.
    pub fn extent_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing_mm[a])
    }

    pub fn same_lattice(&self, other: &VolumeGeometry) -> bool {
        self == other
    }
}

/// Scalar intensity (or weight) volume, `f32` in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub geometry: VolumeGeometry,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: VolumeGeometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Geometry(format!("non-finite value at voxel {pos}")));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: VolumeGeometry, value: f32) -> Self {
        let data = vec![value; geometry.len()];
        Self { geometry, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.index(i, j, k)]
    }
}

/// Integer class map; class 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    pub geometry: VolumeGeometry,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl LabelVolume {
    pub fn new(geometry: VolumeGeometry, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        geometry.validate()?;
        if !(1..=256).contains(&num_classes) {
            return Err(Error::Geometry(format!("num_classes {num_classes} must be in 1..=256")));
        }
        if labels.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "label length {} does not match dims {:?}",
                labels.len(),
                geometry.dims
            )));
        }
        if let Some((index, &value)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| usize::from(l) >= num_classes)
        {
            return Err(Error::LabelOutOfRange {
                value: value.into(),
                index,
                num_classes,
            });
        }
        Ok(Self {
            geometry,
            labels,
            num_classes,
        })
    }

    pub fn background(geometry: VolumeGeometry, num_classes: usize) -> Self {
        let labels = vec![0; geometry.len()];
        Self {
            geometry,
            labels,
            num_classes,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.geometry.index(i, j, k)]
    }

    pub fn mask_of(&self, class: u8) -> Mask {
        Mask {
            dims: self.geometry.dims,
            data: self.labels.iter().map(|&l| l == class).collect(),
        }
    }

    pub fn foreground(&self) -> Mask {
        Mask {
            dims: self.geometry.dims,
            data: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    /// Foreground class ids `1..K`.
    pub fn foreground_classes(&self) -> impl Iterator<Item = u8> {
        (1..self.num_classes).map(|c| c as u8)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }
}

/// `K` probabilities per voxel, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVolume {
    pub geometry: VolumeGeometry,
    pub probs: Vec<f32>,
    pub num_classes: usize,
    /// Set when every voxel's probabilities sum to one. Fused sums are not.
    pub normalized: bool,
}

impl ProbabilityVolume {
    pub const NORMALIZATION_TOLERANCE: f32 = 1e-4;

    pub fn new(
        geometry: VolumeGeometry,
        probs: Vec<f32>,
        num_classes: usize,
        normalized: bool,
    ) -> Result<Self> {
        geometry.validate()?;
        if num_classes == 0 {
            return Err(Error::Geometry("num_classes must be >= 1".into()));
        }
        if probs.len() != geometry.len() * num_classes {
            return Err(Error::Geometry(format!(
                "probability length {} does not match dims {:?} x {num_classes} classes",
                probs.len(),
                geometry.dims
            )));
        }
        if let Some(pos) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Geometry(format!(
                "probability entry {pos} is negative or non-finite"
            )));
        }
        if normalized {
            for (voxel, chunk) in probs.chunks_exact(num_classes).enumerate() {
                let sum: f32 = chunk.iter().sum();
                if (sum - 1.0).abs() > Self::NORMALIZATION_TOLERANCE {
                    return Err(Error::Geometry(format!(
                        "voxel {voxel} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self {
            geometry,
            probs,
            num_classes,
            normalized,
        })
    }

    pub fn voxel(&self, index: usize) -> &[f32] {
        &self.probs[index * self.num_classes..(index + 1) * self.num_classes]
    }
}

/// Boolean grid with the same storage order as the volumes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Geometry(format!(
                "mask length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: bool) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}
