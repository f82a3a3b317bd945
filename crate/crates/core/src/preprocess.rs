//! Intensity clipping and robust standardization, applied per image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Linear-interpolation quantile between order statistics (position
/// `(n - 1) * p`). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Which statistic is subtracted before dividing by the interquartile range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Center {
    #[default]
    Mean,
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub center: Center,
}

impl StandardizationStats {
    pub fn from_volume(v: &Volume, center: Center) -> Self {
        let mut sorted: Vec<f64> = v.data.iter().map(|&x| f64::from(x)).collect();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Self {
            mean,
            median: quantile_sorted(&sorted, 0.5),
            q25: quantile_sorted(&sorted, 0.25),
            q75: quantile_sorted(&sorted, 0.75),
            center,
        }
    }

    pub fn center_value(&self) -> f64 {
        match self.center {
            Center::Mean => self.mean,
            Center::Median => self.median,
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

pub fn clip_negatives(v: &Volume) -> Volume {
    Volume {
        geometry: v.geometry.clone(),
        data: v.data.iter().map(|&x| x.max(0.0)).collect(),
    }
}

/// `(x - mean) / (q75 - q25)` over all voxels of `v`.
pub fn standardize(v: &Volume) -> Result<(Volume, StandardizationStats)> {
    standardize_with(v, Center::Mean)
}

pub fn standardize_with(v: &Volume, center: Center) -> Result<(Volume, StandardizationStats)> {
    let stats = StandardizationStats::from_volume(v, center);
    let iqr = stats.iqr();
    if iqr < 1e-9 {
        return Err(Error::DegenerateScale { iqr });
    }
    let c = stats.center_value();
    let data = v
        .data
        .iter()
        .map(|&x| ((f64::from(x) - c) / iqr) as f32)
        .collect();
    Ok((
        Volume {
            geometry: v.geometry.clone(),
            data,
        },
        stats,
    ))
}

/// Clip then standardize.
pub fn preprocess(v: &Volume, center: Center) -> Result<(Volume, StandardizationStats)> {
    standardize_with(&clip_negatives(v), center)
}
