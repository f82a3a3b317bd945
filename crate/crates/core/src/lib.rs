//! Multiplanar volumetric segmentation toolkit.
//!
//! A 3-D volume is cut into oriented isotropic slice stacks, each stack is
//! segmented by a 2-D slice segmenter (an external plugin process or a
//! built-in oracle), the per-view probabilities are reconstructed on the
//! volume lattice and fused by sum and argmax. Around that loop sit the
//! distance-based tools: boundary-emphasis loss weights, inter-class collision
//! detection, symmetric connected-component clean-up and the evaluation
//! metrics (Dice, gap-restricted Dice, Hausdorff distance).

pub mod cli;
pub mod distance;
pub mod error;
pub mod metrics;
pub mod multiplanar;
pub mod phantom;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod segmenter;
pub mod volume;

pub use error::{Error, Result};
