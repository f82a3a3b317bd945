//! Distance fields over label volumes and what is built on them: the
//! boundary-emphasis weight map, the gap region used by GapDice, and the
//! inter-class collision set.

mod edt;

pub use edt::{edt, edt_mm, squared_edt};

use serde::{Deserialize, Serialize};

use crate::volume::{LabelVolume, Mask, Volume, VolumeGeometry};

/// Units in which distances are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnits {
    #[default]
    Voxel,
    Millimeter,
}

impl DistanceUnits {
    fn spacing(self, geometry: &VolumeGeometry) -> [f64; 3] {
        match self {
            DistanceUnits::Voxel => [1.0; 3],
            DistanceUnits::Millimeter => geometry.spacing_mm,
        }
    }
}

/// Distance to the nearest and second-nearest foreground class at every voxel.
///
/// Class id 0 in `nearest_class`/`second_class` means "no class" and pairs with
/// an infinite distance.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDistanceField {
    pub geometry: VolumeGeometry,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub nearest_class: Vec<u8>,
    pub second_class: Vec<u8>,
}

impl ClassDistanceField {
    pub fn sum(&self, index: usize) -> f64 {
        self.d1[index] + self.d2[index]
    }
}

pub fn class_distances(y: &LabelVolume) -> ClassDistanceField {
    class_distances_in(y, DistanceUnits::Voxel)
}

/// Classes are folded in ascending id order with strict comparisons, so the
/// lower id wins distance ties.
pub fn class_distances_in(y: &LabelVolume, units: DistanceUnits) -> ClassDistanceField {
    let n = y.geometry.len();
    let spacing = units.spacing(&y.geometry);
    let mut field = ClassDistanceField {
        geometry: y.geometry.clone(),
        d1: vec![f64::INFINITY; n],
        d2: vec![f64::INFINITY; n],
        nearest_class: vec![0; n],
        second_class: vec![0; n],
    };
    let counts = y.class_counts();
    for class in y.foreground_classes() {
        if counts[usize::from(class)] == 0 {
            continue;
        }
        let mut dc = squared_edt(&y.mask_of(class), spacing);
        dc.iter_mut().for_each(|x| *x = x.sqrt());
        for (i, &d) in dc.iter().enumerate() {
            if d < field.d1[i] {
                field.d2[i] = field.d1[i];
                field.second_class[i] = field.nearest_class[i];
                field.d1[i] = d;
                field.nearest_class[i] = class;
            } else if d < field.d2[i] {
                field.d2[i] = d;
                field.second_class[i] = class;
            }
        }
    }
    field
}

/// Erodes every foreground class by the discrete ball `{o : |o| <= radius}`.
/// A voxel survives iff its whole ball lies inside its own class; positions
/// outside the grid count as out-of-class. Returns the eroded labels and the
/// classes that were present before but vanished.
pub fn erode_classes(y: &LabelVolume, radius: u32) -> (LabelVolume, Vec<u8>) {
    if radius == 0 {
        return (y.clone(), Vec::new());
    }
    let [nx, ny, nz] = y.geometry.dims;
    let padded = [nx + 2, ny + 2, nz + 2];
    let r2 = f64::from(radius) * f64::from(radius);
    let counts = y.class_counts();
    let mut out = y.clone();
    let mut emptied = Vec::new();
    for class in y.foreground_classes() {
        if counts[usize::from(class)] == 0 {
            continue;
        }
        // Distance to the nearest out-of-class voxel, including a one-voxel
        // out-of-grid frame.
        let mut outside = Mask::filled(padded, true);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if y.get(i, j, k) == class {
                        outside.data[(i + 1) + padded[0] * ((j + 1) + padded[1] * (k + 1))] = false;
                    }
                }
            }
        }
        let d2 = squared_edt(&outside, [1.0; 3]);
        let mut kept = 0usize;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = y.geometry.index(i, j, k);
                    if y.labels[idx] != class {
                        continue;
                    }
                    if d2[(i + 1) + padded[0] * ((j + 1) + padded[1] * (k + 1))] > r2 {
                        kept += 1;
                    } else {
                        out.labels[idx] = 0;
                    }
                }
            }
        }
        if kept == 0 {
            emptied.push(class);
        }
    }
    (out, emptied)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMapParams {
    pub w0: f64,
    pub sigma: f64,
    pub wc: f64,
    pub erode_radius_vox: u32,
    #[serde(default)]
    pub units: DistanceUnits,
}

impl Default for WeightMapParams {
    fn default() -> Self {
        Self {
            w0: 10.0,
            sigma: 5.0,
            wc: 1.0,
            erode_radius_vox: 0,
            units: DistanceUnits::Voxel,
        }
    }
}

impl WeightMapParams {
    /// Erode by a radius-3 ball and double `w0` to 20.
    pub fn eroded_recipe() -> Self {
        Self {
            w0: 20.0,
            erode_radius_vox: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.w0 >= 0.0 && self.sigma > 0.0 && self.wc >= 0.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "weight map parameters need w0 >= 0, sigma > 0, wc >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// `wc + w0 * exp(-(d1 + d2)^2 / (2 sigma^2))`; `wc` when the sum is infinite.
    pub fn weight(&self, distance_sum: f64) -> f64 {
        if !distance_sum.is_finite() {
            return self.wc;
        }
        self.wc + self.w0 * (-(distance_sum * distance_sum) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub weights: Volume,
    pub params: WeightMapParams,
    /// Classes eroded to nothing; their distance field is treated as infinite.
    pub emptied_classes: Vec<u8>,
}

impl WeightMap {
    pub fn warnings(&self) -> Vec<String> {
        self.emptied_classes
            .iter()
            .map(|c| {
                format!(
                    "class {c} vanished under erosion radius {}",
                    self.params.erode_radius_vox
                )
            })
            .collect()
    }
}

pub fn weight_map(y: &LabelVolume, params: &WeightMapParams) -> crate::Result<WeightMap> {
    params.validate()?;
    let (eroded, emptied_classes) = erode_classes(y, params.erode_radius_vox);
    let field = class_distances_in(&eroded, params.units);
    let data = (0..field.d1.len())
        .map(|i| params.weight(field.sum(i)) as f32)
        .collect();
    Ok(WeightMap {
        weights: Volume {
            geometry: y.geometry.clone(),
            data,
        },
        params: params.clone(),
        emptied_classes,
    })
}

/// Voxels where `d1 + d2 < epsilon` on the un-eroded labels.
pub fn gap_region(y: &LabelVolume, epsilon: f64) -> Mask {
    gap_region_from(&class_distances(y), epsilon)
}

pub fn gap_region_from(field: &ClassDistanceField, epsilon: f64) -> Mask {
    Mask {
        dims: field.geometry.dims,
        data: (0..field.d1.len()).map(|i| field.sum(i) < epsilon).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub epsilon: f64,
    /// Exact size of the collision set.
    pub count: usize,
    /// Voxel indices `(i, j, k)` of colliding voxels, possibly truncated.
    pub points: Vec<[usize; 3]>,
    pub truncated: bool,
}

/// Foreground voxels whose distance to any *other* foreground class is at
/// most `epsilon` (voxel units).
pub fn detect_collisions(p: &LabelVolume, epsilon: f64) -> CollisionReport {
    detect_collisions_limited(p, epsilon, usize::MAX)
}

pub fn detect_collisions_limited(p: &LabelVolume, epsilon: f64, max_points: usize) -> CollisionReport {
    let field = class_distances(p);
    // On a foreground voxel the nearest class is its own (distance 0), so the
    // distance to the closest other class is the second-nearest distance.
    let mut count = 0;
    let mut points = Vec::new();
    for (i, &label) in p.labels.iter().enumerate() {
        if label != 0 && field.d2[i] <= epsilon {
            count += 1;
            if points.len() < max_points {
                points.push(p.geometry.coords(i));
            }
        }
    }
    CollisionReport {
        epsilon,
        count,
        truncated: points.len() < count,
        points,
    }
}
