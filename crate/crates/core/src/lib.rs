//! Joint completion and understanding for scattered point clouds.
//!
//! A scattered (incomplete) point cloud is rebuilt by a masked-autoencoder
//! upstream, then classified or segmented by a hierarchical multi-head
//! downstream. The deepest head acts as a teacher that distills its predictive
//! distribution into the shallower heads, and a binned mutual-information
//! analyzer tracks what each level learns over training.
//!
//! The crate is organized along the pipeline:
//!
//! - [`geometry`]: deterministic point-set kernels (FPS, kNN, Chamfer).
//! - [`scatter`]: patch-based sparse sampling of dense source clouds.
//! - [`corpus`]: procedural shape corpus and xyz/ply/off ingestion.
//! - [`autodiff`]: reverse-mode tape over dense f64 tensors, plus Adam.
//! - [`upstream`]: encoder/decoder with point-splitting refinement.
//! - [`downstream`]: hierarchical feature extraction, per-level heads,
//!   deep supervision and self-distillation losses, part segmentation.
//! - [`infoplane`]: binned mutual-information traces per level and epoch.
//! - [`trainer`]: joint training loop, schedules, evaluation, ablations.

pub mod autodiff;
pub mod corpus;
pub mod downstream;
pub mod geometry;
pub mod infoplane;
pub mod scatter;
pub mod trainer;
pub mod upstream;

mod error;

pub use error::{Error, Result};
pub use geometry::PointCloud;
