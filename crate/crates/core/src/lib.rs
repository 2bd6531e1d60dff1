//! Core data model and classical numerics for two-image T1rho mapping.
//!
//! * [`volume`]: voxel grids, ROI masks, spin-lock schedules, the on-disk
//!   volume container and per-slice Gaussian smoothing.
//! * [`signal`] and [`phantom`]: the mono-exponential spin-lock decay model,
//!   magnitude noise and synthetic knee-like phantoms with ground truth.
//! * [`nlls`]: closed-form two-point inversion and a bounded
//!   Levenberg-Marquardt multi-point solver.
//! * [`metrics`]: voxel-wise and regional error metrics, fold plans and
//!   report aggregation.
//! * [`exec`]: the sequential reference path and the optional rayon path.

pub mod container;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod nlls;
pub mod phantom;
pub mod signal;
pub mod volume;

pub use error::{Error, Result};
pub use exec::Exec;
pub use volume::{RoiMask, TslSchedule, Volume3D};
