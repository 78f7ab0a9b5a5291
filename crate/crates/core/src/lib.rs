//! Pruning and motion grouping for deformable 3D Gaussian splatting.
//!
//! The crate is organised around the data flow of the pipeline:
//!
//! * [`gaussian_model`]: canonical Gaussian clouds, cameras, PLY persistence.
//! * [`render`]: CPU reference splat renderer with the footprint and
//!   colour/opacity backward passes.
//! * [`deformation`]: time-varying deformation sources and trajectory sets.
//! * [`pruning`]: temporal sensitivity scores, annealed timestamp noise and
//!   scheduled pruning.
//! * [`groupflow`]: control-point selection, trajectory grouping, rigid
//!   fitting and per-group flow evaluation.
//! * [`scene_synth`]: deterministic synthetic dynamic scenes with known
//!   ground truth.
//! * [`metrics`]: PSNR/SSIM, grouping purity, model size and the render
//!   benchmark harness.

pub mod deformation;
pub mod error;
pub mod gaussian_model;
pub mod groupflow;
pub mod math;
pub mod metrics;
pub mod pruning;
pub mod render;
pub mod scene_synth;

mod binio;

pub use error::{Error, Result};
