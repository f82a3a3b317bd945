//! End-to-end multiplanar inference: per view sample, segment and
//! reconstruct, then fuse.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiplanar::{
    extract_slices, fuse, reconstruct_view, SliceInputs, ViewGrid, ViewSet,
};
use crate::segmenter::{run_segmenter, RunContext, SegmenterHandle};
use crate::volume::{LabelVolume, ProbabilityVolume, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictSettings {
    pub pixels_per_side: usize,
    pub side_mm: f64,
    /// Sampling center; the image's physical center when `None`.
    pub center_mm: Option<[f64; 3]>,
    pub num_classes: usize,
    pub jobs: usize,
    pub work_dir: PathBuf,
    pub keep_views: bool,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub labels: LabelVolume,
    /// Per-view reconstructions, when requested.
    pub views: Vec<ProbabilityVolume>,
}

fn predict_one(
    image: &Volume,
    handle: &SegmenterHandle,
    grid: &ViewGrid,
    ctx: &RunContext,
) -> Result<ProbabilityVolume> {
    let batch = extract_slices(&SliceInputs::image(image), grid);
    let pred = run_segmenter(handle, &batch, ctx)?;
    reconstruct_view(&pred, grid, &image.geometry)
}

pub fn predict_volume(
    image: &Volume,
    handle: &SegmenterHandle,
    views: &ViewSet,
    settings: &PredictSettings,
) -> Result<Prediction> {
    let center = settings.center_mm.unwrap_or_else(|| image.geometry.center_mm());
    let grids = views
        .views
        .iter()
        .map(|&n| ViewGrid::new(n, center, settings.side_mm, settings.pixels_per_side))
        .collect::<Result<Vec<_>>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let per_view: Vec<ProbabilityVolume> = pool.install(|| {
        grids
            .par_iter()
            .enumerate()
            .map(|(i, grid)| {
                let ctx = RunContext {
                    work_dir: settings.work_dir.join(format!("view_{i:02}")),
                    num_classes: settings.num_classes,
                };
                log::debug!("view {i}: normal {:?}", grid.normal);
                predict_one(image, handle, grid, &ctx)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let labels = fuse(&per_view)?;
    Ok(Prediction {
        labels,
        views: if settings.keep_views { per_view } else { Vec::new() },
    })
}
