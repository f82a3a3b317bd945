//! Synthetic "joint" phantoms: quadric and capsule shapes with an enforced
//! inter-class clearance, optional mirrored class pairs and Gaussian noise.

use serde::{Deserialize, Serialize};

use crate::distance::squared_edt;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Mask, Volume, VolumeGeometry};

/// Counter-based generator: output `n` for `seed` is
/// `splitmix64(seed + (n + 1) * 0x9E37_79B9_7F4A_7C15)`, where splitmix64 is the
/// finalizer `z ^= z >> 30; z *= 0xBF58_476D_1CE4_E5B9; z ^= z >> 27;
/// z *= 0x94D0_49BB_1331_11EB; z ^= z >> 31`. Any value can be recomputed from
/// `(seed, n)` alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    pub seed: u64,
}

impl CounterRng {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn bits(&self, counter: u64) -> u64 {
        let mut z = self
            .seed
            .wrapping_add(counter.wrapping_add(1).wrapping_mul(Self::GOLDEN));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on counters `2n` and `2n + 1`.
    pub fn normal(&self, n: u64) -> f64 {
        let u1 = 1.0 - self.uniform(2 * n);
        let u2 = self.uniform(2 * n + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Derived stream for an independent purpose.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.bits(stream ^ 0xA076_1D64_78BD_642F))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// `radii_mm = [r]`
    Sphere,
    /// `radii_mm = [rx, ry, rz]`
    Ellipsoid,
    /// `radii_mm = [radius, half_length]`, segment along `axis` through the center
    Capsule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassShape {
    pub id: u8,
    pub shape: ShapeKind,
    pub center_mm: [f64; 3],
    pub radii_mm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
}

impl ClassShape {
    fn validate(&self) -> Result<()> {
        let need = match self.shape {
            ShapeKind::Sphere => 1,
            ShapeKind::Ellipsoid => 3,
            ShapeKind::Capsule => 2,
        };
        if self.radii_mm.len() != need || self.radii_mm.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "class {} {:?} needs {need} nonnegative radii, got {:?}",
                self.id, self.shape, self.radii_mm
            )));
        }
        if (self.shape == ShapeKind::Sphere || self.shape == ShapeKind::Ellipsoid)
            && self.radii_mm.contains(&0.0) {
                return Err(Error::InvalidArgument(format!("class {} has a zero radius", self.id)));
            }
        Ok(())
    }

    fn axis_unit(&self) -> [f64; 3] {
        let a = self.axis.unwrap_or([0.0, 0.0, 1.0]);
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        if n > 0.0 {
            [a[0] / n, a[1] / n, a[2] / n]
        } else {
            [0.0, 0.0, 1.0]
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d: [f64; 3] = std::array::from_fn(|a| p[a] - self.center_mm[a]);
        match self.shape {
            ShapeKind::Sphere => {
                let r = self.radii_mm[0];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
            }
            ShapeKind::Ellipsoid => {
                (0..3).map(|a| (d[a] / self.radii_mm[a]).powi(2)).sum::<f64>() <= 1.0
            }
            ShapeKind::Capsule => {
                let (r, half) = (self.radii_mm[0], self.radii_mm[1]);
                let axis = self.axis_unit();
                let t = (d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2]).clamp(-half, half);
                let q: [f64; 3] = std::array::from_fn(|a| d[a] - t * axis[a]);
                q[0] * q[0] + q[1] * q[1] + q[2] * q[2] <= r * r
            }
        }
    }

    /// Conservative axis-aligned bounding box in mm.
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let ext: [f64; 3] = match self.shape {
            ShapeKind::Sphere => [self.radii_mm[0]; 3],
            ShapeKind::Ellipsoid => [self.radii_mm[0], self.radii_mm[1], self.radii_mm[2]],
            ShapeKind::Capsule => {
                let axis = self.axis_unit();
                std::array::from_fn(|a| self.radii_mm[0] + self.radii_mm[1] * axis[a].abs())
            }
        };
        (
            std::array::from_fn(|a| self.center_mm[a] - ext[a]),
            std::array::from_fn(|a| self.center_mm[a] + ext[a]),
        )
    }
}

/// Mirror each listed source class across the midplane of `axis` to produce
/// its partner, which must not be listed among the shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorPairs {
    pub axis: usize,
    /// `[source, mirrored]` class ids.
    pub pairs: Vec<[u8; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub bone_value: f64,
    pub background_value: f64,
    pub noise_sd: f64,
}

impl Default for Intensity {
    fn default() -> Self {
        Self {
            bone_value: 1000.0,
            background_value: 0.0,
            noise_sd: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    #[serde(default)]
    pub origin_mm: [f64; 3],
    pub classes: Vec<ClassShape>,
    #[serde(default)]
    pub gap_vox: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<MirrorPairs>,
    #[serde(default)]
    pub intensity: Intensity,
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    pub fn geometry(&self) -> Result<VolumeGeometry> {
        VolumeGeometry::new(self.dims, self.spacing_mm, self.origin_mm)
    }

    /// Class ids in rasterization order: listed shapes, each followed
    /// immediately by its mirror partner if any.
    fn order(&self) -> Vec<(u8, Option<usize>, Option<u8>)> {
        let mut out = Vec::new();
        for (n, shape) in self.classes.iter().enumerate() {
            out.push((shape.id, Some(n), None));
            if let Some(m) = &self.mirror {
                for pair in &m.pairs {
                    if pair[0] == shape.id {
                        out.push((pair[1], None, Some(shape.id)));
                    }
                }
            }
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.order().iter().map(|(id, _, _)| usize::from(*id)).max().unwrap_or(0) + 1
    }

    pub fn validate(&self) -> Result<()> {
        let geometry = self.geometry()?;
        if !(self.gap_vox.is_finite() && self.gap_vox >= 0.0) {
            return Err(Error::InvalidArgument(format!("gap_vox {} must be >= 0", self.gap_vox)));
        }
        if self.intensity.noise_sd < 0.0 {
            return Err(Error::InvalidArgument("noise_sd must be >= 0".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, _, _) in self.order() {
            if id == 0 || !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("class id {id} is zero or repeated")));
            }
        }
        if let Some(m) = &self.mirror {
            if m.axis > 2 {
                return Err(Error::InvalidArgument(format!("mirror axis {} must be 0, 1 or 2", m.axis)));
            }
            for pair in &m.pairs {
                if !self.classes.iter().any(|c| c.id == pair[0]) {
                    return Err(Error::InvalidArgument(format!(
                        "mirror source class {} is not a listed shape",
                        pair[0]
                    )));
                }
            }
        }
        let lo = geometry.origin_mm;
        let hi = geometry.physical_position([geometry.dims[0] - 1, geometry.dims[1] - 1, geometry.dims[2] - 1]);
        for shape in &self.classes {
            shape.validate()?;
            let (blo, bhi) = shape.bounds();
            if (0..3).any(|a| blo[a] < lo[a] || bhi[a] > hi[a]) {
                return Err(Error::InvalidArgument(format!(
                    "class {} does not fit inside the volume",
                    shape.id
                )));
            }
        }
        Ok(())
    }
}

fn rasterize(shape: &ClassShape, geometry: &VolumeGeometry) -> Mask {
    Mask {
        dims: geometry.dims,
        data: (0..geometry.len())
            .map(|i| shape.contains(geometry.physical_position(geometry.coords(i))))
            .collect(),
    }
}

fn mirror_mask(mask: &Mask, axis: usize) -> Mask {
    let [nx, ny, nz] = mask.dims;
    let mut data = vec![false; mask.data.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut src = [i, j, k];
                src[axis] = mask.dims[axis] - 1 - src[axis];
                data[i + nx * (j + ny * k)] = mask.data[src[0] + nx * (src[1] + ny * src[2])];
            }
        }
    }
    Mask { dims: mask.dims, data }
}

/// Rasterizes the shapes (later classes win overlaps), then erodes each class
/// against all earlier ones until every pair of voxels from different classes
/// is at least `gap_vox` apart. Intensity is `bone_value` on foreground and
/// `background_value` elsewhere, plus `noise_sd` Gaussian noise on every voxel.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, LabelVolume)> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let num_classes = spec.num_classes();
    let order = spec.order();

    let mut masks: Vec<(u8, Mask)> = Vec::with_capacity(order.len());
    for &(id, shape, mirrored_from) in &order {
        let mask = match (shape, mirrored_from) {
            (Some(n), _) => rasterize(&spec.classes[n], &geometry),
            (None, Some(src)) => {
                let source = &masks.iter().find(|(c, _)| *c == src).expect("source rasterized first").1;
                mirror_mask(source, spec.mirror.as_ref().expect("mirror present").axis)
            }
            (None, None) => unreachable!(),
        };
        masks.push((id, mask));
    }

    let mut labels = vec![0u8; geometry.len()];
    for (id, mask) in &masks {
        for (l, &m) in labels.iter_mut().zip(&mask.data) {
            if m {
                *l = *id;
            }
        }
    }

    if spec.gap_vox > 0.0 {
        let gap2 = spec.gap_vox * spec.gap_vox;
        let mut earlier = Mask::filled(geometry.dims, false);
        for (id, _) in &masks {
            if earlier.data.iter().any(|&b| b) {
                let d2 = squared_edt(&earlier, [1.0; 3]);
                for (l, &d) in labels.iter_mut().zip(&d2) {
                    if *l == *id && d < gap2 {
                        *l = 0;
                    }
                }
            }
            if !labels.iter().any(|l| l == id) {
                return Err(Error::InfeasibleGap { class: *id });
            }
            for (e, l) in earlier.data.iter_mut().zip(&labels) {
                *e |= l == id;
            }
        }
    } else if let Some((id, _)) = masks.iter().find(|(id, _)| !labels.contains(id)) {
        return Err(Error::InfeasibleGap { class: *id });
    }

    let noise = CounterRng::new(spec.seed);
    let data = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let base = if l != 0 {
                spec.intensity.bone_value
            } else {
                spec.intensity.background_value
            };
            let n = if spec.intensity.noise_sd > 0.0 {
                spec.intensity.noise_sd * noise.normal(i as u64)
            } else {
                0.0
            };
            (base + n) as f32
        })
        .collect();

    Ok((
        Volume::new(geometry.clone(), data)?,
        LabelVolume::new(geometry, labels, num_classes)?,
    ))
}

/// Ready-made phantoms used by tests, examples and the CLI.
pub mod presets {
    use super::*;

    fn sphere(id: u8, center: [f64; 3], r: f64) -> ClassShape {
        ClassShape {
            id,
            shape: ShapeKind::Sphere,
            center_mm: center,
            radii_mm: vec![r],
            axis: None,
        }
    }

    /// 64^3 unit-spacing volume with two radius-12 spheres mirrored across the
    /// x midplane (classes 1 and 2), five voxels apart along the x axis.
    pub fn two_spheres() -> PhantomSpec {
        PhantomSpec {
            dims: [64; 3],
            spacing_mm: [1.0; 3],
            origin_mm: [0.0; 3],
            classes: vec![sphere(1, [17.5, 31.5, 31.5], 12.0)],
            gap_vox: 3.0,
            mirror: Some(MirrorPairs {
                axis: 0,
                pairs: vec![[1, 2]],
            }),
            intensity: Intensity {
                bone_value: 1000.0,
                background_value: 0.0,
                noise_sd: 50.0,
            },
            seed: 7,
        }
    }

    /// Two overlapping spheres separated only by gap enforcement, so the
    /// clearance is exactly the enforced 3 voxels along the contact line.
    pub fn gap3() -> PhantomSpec {
        PhantomSpec {
            dims: [40, 32, 32],
            spacing_mm: [1.0; 3],
            origin_mm: [0.0; 3],
            classes: vec![sphere(1, [13.0, 15.5, 15.5], 9.0), sphere(2, [27.0, 15.5, 15.5], 9.0)],
            gap_vox: 3.0,
            mirror: None,
            intensity: Intensity::default(),
            seed: 3,
        }
    }

    /// Left/right femoral heads (1, 2, mirrored) below a pelvis-like capsule (3),
    /// 3 voxels of clearance.
    pub fn hip() -> PhantomSpec {
        PhantomSpec {
            dims: [64, 48, 48],
            spacing_mm: [1.0; 3],
            origin_mm: [0.0; 3],
            classes: vec![
                sphere(1, [16.0, 23.5, 18.0], 9.0),
                ClassShape {
                    id: 3,
                    shape: ShapeKind::Capsule,
                    center_mm: [31.5, 23.5, 33.0],
                    radii_mm: vec![6.0, 20.0],
                    axis: Some([1.0, 0.0, 0.0]),
                },
            ],
            gap_vox: 3.0,
            mirror: Some(MirrorPairs {
                axis: 0,
                pairs: vec![[1, 2]],
            }),
            intensity: Intensity {
                bone_value: 800.0,
                background_value: 20.0,
                noise_sd: 30.0,
            },
            seed: 11,
        }
    }

    pub fn by_name(name: &str) -> Option<PhantomSpec> {
        match name {
            "two-spheres" => Some(two_spheres()),
            "gap3" => Some(gap3()),
            "hip" => Some(hip()),
            _ => None,
        }
    }
}
