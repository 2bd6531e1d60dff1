//! Learned two-image T1rho fitters.
//!
//! Both models see log-encoded intensities: each channel becomes
//! `ln(max(x, floor) / ref)` where `ref` is the subject's ROI mean of the
//! baseline-like image. Targets are T1rho in ms.

pub mod config;
pub mod data;
pub mod error;
pub mod log;
pub mod mlp;
pub mod sampler;
pub mod unet;

pub use config::{AugmentConfig, LossMaskMode, MlpConfig, TrainConfig, UNetConfig};
pub use data::{apply_roi_mask, extract_voxels, reassemble_voxels, SubjectData};
pub use error::{DlError, Result};
pub use log::{EpochRecord, TrainLog};
pub use mlp::{train_mlp, TrainedMlp};
pub use sampler::{Patch, PatchSampler};
pub use unet::{infer_unet_sliding, train_unet, TrainedUNet};
