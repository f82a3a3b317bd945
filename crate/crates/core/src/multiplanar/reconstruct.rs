use super::ViewGrid;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ProbabilityVolume, VolumeGeometry};

/// Per-pixel class probabilities for a full `d x d x d` view, laid out as
/// `[slice][row][column][class]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicePrediction {
    pub pixels_per_side: usize,
    pub num_classes: usize,
    pub probs: Vec<f32>,
}

impl SlicePrediction {
    pub fn zeros(pixels_per_side: usize, num_classes: usize) -> Self {
        Self {
            pixels_per_side,
            num_classes,
            probs: vec![0.0; pixels_per_side.pow(3) * num_classes],
        }
    }

    pub fn slice_len(&self) -> usize {
        self.pixels_per_side * self.pixels_per_side * self.num_classes
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.slice_len();
        &mut self.probs[k * n..(k + 1) * n]
    }
}

/// Tolerance (grid units) for treating a point as inside the sampled cube.
const CUBE_EPS: f64 = 1e-9;

/// Maps the per-view predictions back onto `target` voxel centers by trilinear
/// interpolation of every class channel. Voxels outside the sampled cube get
/// all-zero probabilities; within the half-pixel rim of the cube the nearest
/// edge sample is extended.
pub fn reconstruct_view(
    pred: &SlicePrediction,
    grid: &ViewGrid,
    target: &VolumeGeometry,
) -> Result<ProbabilityVolume> {
    let d = grid.pixels_per_side;
    let k = pred.num_classes;
    if pred.pixels_per_side != d || pred.probs.len() != d * d * d * k || k == 0 {
        return Err(Error::Mismatch(format!(
            "prediction of side {} with {} values does not match a {d}^3 grid with {k} classes",
            pred.pixels_per_side,
            pred.probs.len()
        )));
    }
    let mut probs = vec![0.0f32; target.len() * k];
    let lo = -0.5 - CUBE_EPS;
    let hi = d as f64 - 0.5 + CUBE_EPS;
    let last = (d - 1) as f64;
    let mut acc = vec![0.0f64; k];

    for idx in 0..target.len() {
        let p = target.physical_position(target.coords(idx));
        let g = grid.grid_coords(p);
        if g.iter().any(|&x| !(x >= lo && x <= hi)) {
            continue;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let mut x = g[a].clamp(0.0, last);
            let r = x.round();
            if (x - r).abs() < CUBE_EPS {
                x = r;
            }
            let b = (x.floor() as usize).min(d - 2);
            base[a] = b;
            frac[a] = x - b as f64;
        }
        acc.fill(0.0);
        for corner in 0..8 {
            let bits = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            // grid coords are (column a, row b, slice k)
            let (col, row, slice) = (base[0] + bits[0], base[1] + bits[1], base[2] + bits[2]);
            let off = ((slice * d + row) * d + col) * k;
            for (c, slot) in acc.iter_mut().enumerate() {
                *slot += w * f64::from(pred.probs[off + c]);
            }
        }
        for (c, &v) in acc.iter().enumerate() {
            probs[idx * k + c] = v as f32;
        }
    }
    ProbabilityVolume::new(target.clone(), probs, k, false)
}

/// Sums the views in order, then takes the per-voxel argmax (lower class on
/// ties; all-zero sums become background).
pub fn fuse(views: &[ProbabilityVolume]) -> Result<LabelVolume> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidArgument("fuse needs at least one view".into()))?;
    let k = first.num_classes;
    for (i, v) in views.iter().enumerate().skip(1) {
        if v.geometry != first.geometry || v.num_classes != k {
            return Err(Error::Mismatch(format!(
                "view {i} differs from view 0 in geometry or class count"
            )));
        }
    }
    if k > 256 {
        return Err(Error::Mismatch(format!("{k} classes do not fit u8 labels")));
    }
    let n = first.geometry.len();
    let mut labels = vec![0u8; n];
    let mut sum = vec![0.0f64; k];
    for (voxel, label) in labels.iter_mut().enumerate() {
        sum.fill(0.0);
        for v in views {
            for (c, s) in sum.iter_mut().enumerate() {
                *s += f64::from(v.probs[voxel * k + c]);
            }
        }
        let mut best = 0;
        for c in 1..k {
            if sum[c] > sum[best] {
                best = c;
            }
        }
        *label = best as u8;
    }
    LabelVolume::new(first.geometry.clone(), labels, k)
}
