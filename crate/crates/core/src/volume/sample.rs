use super::{LabelVolume, Volume, VolumeGeometry};

/// Continuous indices closer than this to an integer are snapped onto it, so
/// that points generated from voxel centers reproduce voxel values exactly.
const SNAP: f64 = 1e-9;

#[inline]
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

/// Nearest voxel to a physical point, rounding half away from zero in index
/// space. `None` outside the grid's voxel cells.
pub fn nearest_index(geometry: &VolumeGeometry, point_mm: [f64; 3]) -> Option<usize> {
    let ci = geometry.continuous_index(point_mm);
    let mut ijk = [0usize; 3];
    for a in 0..3 {
        let r = snap(ci[a]).round();
        if !(r >= 0.0 && r < geometry.dims[a] as f64) {
            return None;
        }
        ijk[a] = r as usize;
    }
    Some(geometry.index(ijk[0], ijk[1], ijk[2]))
}

impl Volume {
    /// Trilinear interpolation in index space. Returns `fill` unless the point
    /// lies within the convex hull of the voxel centers.
    pub fn sample_trilinear(&self, point_mm: [f64; 3], fill: f32) -> f32 {
        let g = &self.geometry;
        let ci = g.continuous_index(point_mm);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let x = snap(ci[a]);
            let last = (g.dims[a] - 1) as f64;
            if !(x >= 0.0 && x <= last) {
                return fill;
            }
            if g.dims[a] == 1 {
                continue;
            }
            let b = (x.floor() as usize).min(g.dims[a] - 2);
            base[a] = b;
            frac[a] = x - b as f64;
        }

        let step = [
            usize::from(g.dims[0] > 1),
            usize::from(g.dims[1] > 1),
            usize::from(g.dims[2] > 1),
        ];
        let mut acc = 0.0f64;
        for corner in 0..8 {
            let bits = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let idx = g.index(
                base[0] + bits[0] * step[0],
                base[1] + bits[1] * step[1],
                base[2] + bits[2] * step[2],
            );
            acc += w * f64::from(self.data[idx]);
        }
        acc as f32
    }

    pub fn sample_nearest(&self, point_mm: [f64; 3], fill: f32) -> f32 {
        nearest_index(&self.geometry, point_mm).map_or(fill, |i| self.data[i])
    }
}

impl LabelVolume {
    pub fn sample_nearest(&self, point_mm: [f64; 3], fill: u8) -> u8 {
        nearest_index(&self.geometry, point_mm).map_or(fill, |i| self.labels[i])
    }
}
