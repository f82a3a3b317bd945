use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::quantile;
use crate::volume::{LabelVolume, Volume, VolumeGeometry};

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = dot(v, v).sqrt();
    if !(n.is_finite() && n > 1e-12) {
        return Err(Error::InvalidArgument(format!("cannot normalize vector {v:?}")));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// Oriented isotropic `d x d x d` sampling lattice of side `side_mm`.
///
/// Grid point `(a, b, k)` sits at
/// `center + (a - c) s u + (b - c) s v + (k - c) s n` with `c = (d - 1) / 2`
/// and `s = side_mm / d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewGrid {
    pub normal: [f64; 3],
    pub basis_u: [f64; 3],
    pub basis_v: [f64; 3],
    pub center_mm: [f64; 3],
    pub side_mm: f64,
    pub pixels_per_side: usize,
}

impl ViewGrid {
    /// `basis_u = normalize(normal x e)` with `e` the coordinate axis least
    /// aligned with the normal (lowest index on ties); `basis_v = normal x basis_u`.
    pub fn new(normal: [f64; 3], center_mm: [f64; 3], side_mm: f64, pixels_per_side: usize) -> Result<Self> {
        if pixels_per_side < 2 {
            return Err(Error::InvalidArgument(format!(
                "pixels per side must be >= 2 (got {pixels_per_side})"
            )));
        }
        if !(side_mm.is_finite() && side_mm > 0.0) {
            return Err(Error::InvalidArgument(format!("side length {side_mm} must be positive")));
        }
        let normal = normalize(normal)?;
        let mut axis = 0;
        for a in 1..3 {
            if normal[a].abs() < normal[axis].abs() {
                axis = a;
            }
        }
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let basis_u = normalize(cross(normal, e))?;
        let basis_v = cross(normal, basis_u);
        Ok(Self {
            normal,
            basis_u,
            basis_v,
            center_mm,
            side_mm,
            pixels_per_side,
        })
    }

    pub fn pixel_spacing(&self) -> f64 {
        self.side_mm / self.pixels_per_side as f64
    }

    fn half(&self) -> f64 {
        (self.pixels_per_side as f64 - 1.0) * 0.5
    }

    pub fn point(&self, a: f64, b: f64, k: f64) -> [f64; 3] {
        let s = self.pixel_spacing();
        let c = self.half();
        let (da, db, dk) = ((a - c) * s, (b - c) * s, (k - c) * s);
        std::array::from_fn(|x| {
            self.center_mm[x] + da * self.basis_u[x] + db * self.basis_v[x] + dk * self.normal[x]
        })
    }

    /// Inverse of [`ViewGrid::point`].
    pub fn grid_coords(&self, point_mm: [f64; 3]) -> [f64; 3] {
        let s = self.pixel_spacing();
        let c = self.half();
        let rel: [f64; 3] = std::array::from_fn(|x| point_mm[x] - self.center_mm[x]);
        [
            dot(rel, self.basis_u) / s + c,
            dot(rel, self.basis_v) / s + c,
            dot(rel, self.normal) / s + c,
        ]
    }

    pub fn voxel_count(&self) -> usize {
        self.pixels_per_side.pow(3)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    #[default]
    Infer,
    Train,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFit {
    pub pixels_per_side: usize,
    pub side_mm: f64,
}

/// Chooses `(d, m)` from the pooled per-axis voxel counts and extents of all
/// images: the 75th percentile in training mode (count rounded up to even),
/// the maximum in inference mode. With `diagonal`, `m` is the largest volume
/// diagonal and `d` is scaled so the pixel spacing matches the axis fit.
pub fn fit_grid(geometries: &[VolumeGeometry], mode: FitMode, diagonal: bool) -> Result<GridFit> {
    if geometries.is_empty() {
        return Err(Error::InvalidArgument("fit_grid needs at least one geometry".into()));
    }
    let counts: Vec<f64> = geometries
        .iter()
        .flat_map(|g| g.dims.iter().map(|&n| n as f64))
        .collect();
    let extents: Vec<f64> = geometries.iter().flat_map(|g| g.extent_mm()).collect();
    let (d, m) = match mode {
        FitMode::Train => {
            let q = quantile(&counts, 0.75).ceil() as usize;
            (q + q % 2, quantile(&extents, 0.75))
        }
        FitMode::Infer => (
            counts.iter().copied().fold(0.0, f64::max) as usize,
            extents.iter().copied().fold(0.0, f64::max),
        ),
    };
    if !diagonal {
        return Ok(GridFit {
            pixels_per_side: d.max(2),
            side_mm: m,
        });
    }
    let diag = geometries
        .iter()
        .map(|g| g.extent_mm().iter().map(|e| e * e).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let scaled = (d as f64 * diag / m).ceil() as usize;
    Ok(GridFit {
        pixels_per_side: scaled.max(2),
        side_mm: diag,
    })
}

/// `d` slices of `d x d` pixels sampled on a [`ViewGrid`]. Pixel `(a, b)` of
/// slice `k` is stored at `(k * d + b) * d + a`: rows run along `basis_v`,
/// columns along `basis_u`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceBatch {
    pub grid: ViewGrid,
    pub slices: std::ops::Range<usize>,
    pub image: Vec<f32>,
    pub labels: Option<Vec<u8>>,
    pub weights: Option<Vec<f32>>,
}

impl SliceBatch {
    pub fn pixels_per_slice(&self) -> usize {
        self.grid.pixels_per_side * self.grid.pixels_per_side
    }

    pub fn slice_image(&self, k: usize) -> &[f32] {
        let n = self.pixels_per_slice();
        let local = k - self.slices.start;
        &self.image[local * n..(local + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

pub struct SliceInputs<'a> {
    pub image: &'a Volume,
    pub labels: Option<&'a LabelVolume>,
    pub weights: Option<&'a Volume>,
}

impl<'a> SliceInputs<'a> {
    pub fn image(image: &'a Volume) -> Self {
        Self {
            image,
            labels: None,
            weights: None,
        }
    }
}

pub const IMAGE_FILL: f32 = 0.0;
pub const WEIGHT_FILL: f32 = 1.0;
pub const LABEL_FILL: u8 = 0;

/// Samples all `d` slices of the grid.
pub fn extract_slices(inputs: &SliceInputs<'_>, grid: &ViewGrid) -> SliceBatch {
    extract_slice_range(inputs, grid, 0..grid.pixels_per_side)
}

pub fn extract_slice_range(
    inputs: &SliceInputs<'_>,
    grid: &ViewGrid,
    slices: std::ops::Range<usize>,
) -> SliceBatch {
    let d = grid.pixels_per_side;
    let total = slices.len() * d * d;
    let mut image = Vec::with_capacity(total);
    let mut labels = inputs.labels.map(|_| Vec::with_capacity(total));
    let mut weights = inputs.weights.map(|_| Vec::with_capacity(total));
    for k in slices.clone() {
        for b in 0..d {
            for a in 0..d {
                let p = grid.point(a as f64, b as f64, k as f64);
                image.push(inputs.image.sample_trilinear(p, IMAGE_FILL));
                if let (Some(out), Some(lv)) = (labels.as_mut(), inputs.labels) {
                    out.push(lv.sample_nearest(p, LABEL_FILL));
                }
                if let (Some(out), Some(wv)) = (weights.as_mut(), inputs.weights) {
                    out.push(wv.sample_trilinear(p, WEIGHT_FILL));
                }
            }
        }
    }
    SliceBatch {
        grid: grid.clone(),
        slices,
        image,
        labels,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bases_are_right_handed_orthonormal() {
        for n in [[0.0, 0.0, 1.0], [1.0, 2.0, 3.0], [-0.3, 0.9, 0.1], [1.0, 1.0, 1.0]] {
            let g = ViewGrid::new(n, [0.0; 3], 10.0, 4).unwrap();
            assert!(dot(g.basis_u, g.basis_v).abs() < 1e-9);
            assert!(dot(g.basis_u, g.normal).abs() < 1e-9);
            assert!(dot(g.basis_v, g.normal).abs() < 1e-9);
            let c = cross(g.basis_u, g.basis_v);
            for a in 0..3 {
                assert!((c[a] - g.normal[a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn point_mapping_inverts() {
        let g = ViewGrid::new([0.2, -0.5, 0.7], [3.0, 1.0, -2.0], 17.0, 9).unwrap();
        for (a, b, k) in [(0.0, 0.0, 0.0), (3.5, 8.0, 1.25), (8.0, 2.0, 7.0)] {
            let back = g.grid_coords(g.point(a, b, k));
            assert!((back[0] - a).abs() < 1e-9 && (back[1] - b).abs() < 1e-9 && (back[2] - k).abs() < 1e-9);
        }
    }

    #[test]
    fn axial_basis() {
        let g = ViewGrid::new([0.0, 0.0, 1.0], [0.0; 3], 4.0, 4).unwrap();
        assert_eq!(g.basis_u, [0.0, 1.0, 0.0]);
        assert_eq!(g.basis_v, [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn fit_single_geometry() {
        let g = VolumeGeometry::unit([100, 100, 100]);
        let fit = fit_grid(&[g], FitMode::Infer, false).unwrap();
        assert_eq!((fit.pixels_per_side, fit.side_mm), (100, 100.0));
    }

    #[test]
    fn fit_mean_scan() {
        let g = VolumeGeometry::new([415, 244, 266], [0.78, 0.77, 0.96], [0.0; 3]).unwrap();
        let fit = fit_grid(std::slice::from_ref(&g), FitMode::Infer, false).unwrap();
        assert_eq!(fit.pixels_per_side, 415);
        assert!((fit.side_mm - 323.7).abs() < 1e-9);
        let e = g.extent_mm();
        assert!((e[1] - 187.88).abs() < 1e-9 && (e[2] - 255.36).abs() < 1e-9);
    }

    #[test]
    fn fit_train_percentile() {
        // pooled counts {10, 20, 30, 40, 10, 10}: type-7 75th percentile = 27.5
        let a = VolumeGeometry::unit([10, 20, 30]);
        let b = VolumeGeometry::unit([40, 10, 10]);
        let fit = fit_grid(&[a, b], FitMode::Train, false).unwrap();
        assert_eq!(fit.pixels_per_side, 28);
        assert!((fit.side_mm - 27.5).abs() < 1e-12);
        assert!(fit_grid(&[], FitMode::Train, false).is_err());
    }

    #[test]
    fn slice_outside_volume_is_fill() {
        let v = Volume::filled(VolumeGeometry::unit([4, 4, 4]), 3.0);
        let grid = ViewGrid::new([0.3, 0.2, 0.9], [500.0, 0.0, 0.0], 4.0, 4).unwrap();
        let lv = LabelVolume::new(VolumeGeometry::unit([4, 4, 4]), vec![1; 64], 2).unwrap();
        let batch = extract_slices(
            &SliceInputs {
                image: &v,
                labels: Some(&lv),
                weights: Some(&v),
            },
            &grid,
        );
        assert!(batch.image.iter().all(|&x| x == IMAGE_FILL));
        assert!(batch.weights.unwrap().iter().all(|&x| x == WEIGHT_FILL));
        assert!(batch.labels.unwrap().iter().all(|&x| x == LABEL_FILL));
    }
}
