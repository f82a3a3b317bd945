//! Multiplanar slicing: view generation, oriented isotropic slice sampling,
//! per-view reconstruction of slice predictions and multi-view fusion.

mod grid;
mod reconstruct;
mod views;

pub use grid::{
    extract_slice_range, extract_slices, fit_grid, FitMode, GridFit, SliceBatch, SliceInputs,
    ViewGrid, IMAGE_FILL, LABEL_FILL, WEIGHT_FILL,
};
pub use reconstruct::{fuse, reconstruct_view, SlicePrediction};
pub use views::{generate_views, line_angle_deg, ViewMode, ViewSet, MAX_VIEW_ATTEMPTS};
