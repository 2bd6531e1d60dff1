use serde::{Deserialize, Serialize};

use crate::{DlError, Result};

/// Which voxels the U-Net loss sees. `RoiMasked` also zeroes every input
/// voxel outside the ROI (the "masked" U-Net); `Unmasked` trains on every
/// voxel whose ground-truth fit is valid and inside the limiter range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMaskMode {
    #[default]
    Unmasked,
    RoiMasked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub max_rotation_deg: f64,
    pub max_translation_px: usize,
    /// Upper end of the noise sigma, as a fraction of the patch maximum.
    pub max_noise_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            max_rotation_deg: 15.0,
            max_translation_px: 8,
            max_noise_frac: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Encoder levels, counting the bottleneck.
    pub depth: usize,
    pub base_channels: usize,
    pub patch: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub loss_mask_mode: LossMaskMode,
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub patches_per_epoch: usize,
    pub val_patches: usize,
    pub roi_bias: f64,
    pub augment: AugmentConfig,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            depth: 4,
            base_channels: 16,
            patch: 64,
            y_min: 10.0,
            y_max: 100.0,
            loss_mask_mode: LossMaskMode::Unmasked,
            window: 64,
            stride: 32,
            batch_size: 8,
            patches_per_epoch: 128,
            val_patches: 32,
            roi_bias: 0.8,
            augment: AugmentConfig::default(),
        }
    }
}

impl UNetConfig {
    /// Desk-scale network for 64x64 slices.
    pub fn fast() -> Self {
        Self {
            depth: 3,
            patch: 32,
            window: 32,
            stride: 16,
            batch_size: 4,
            patches_per_epoch: 768,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DlError::Config(m.to_string()));
        if self.in_channels != 2 {
            return fail("in_channels must be 2");
        }
        if self.depth == 0 || self.base_channels == 0 {
            return fail("depth and base_channels must be positive");
        }
        let unit = 1usize << (self.depth - 1);
        if self.patch == 0 || self.patch % unit != 0 || self.window % unit != 0 {
            return fail("patch and window must be divisible by 2^(depth-1)");
        }
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return fail("need 0 < stride <= window");
        }
        if !(self.y_min < self.y_max) {
            return fail("y_min must be below y_max");
        }
        if self.batch_size < 2 || self.patches_per_epoch < self.batch_size {
            return fail("need batch_size >= 2 and patches_per_epoch >= batch_size");
        }
        if !(0.0..=1.0).contains(&self.roi_bias) {
            return fail("roi_bias must be a probability");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub in_features: usize,
    pub hidden_width: usize,
    pub hidden_blocks: usize,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            in_features: 2,
            hidden_width: 64,
            hidden_blocks: 4,
            batch_size: 512,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_features != 2 || self.hidden_width == 0 || self.hidden_blocks == 0 || self.batch_size < 2 {
            return Err(DlError::Config("bad MLP shape".into()));
        }
        Ok(())
    }
}

/// Optimisation schedule shared by both fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Per-epoch learning-rate multiplier.
    pub lr_decay: f64,
    /// Epochs without validation improvement before stopping; `None` trains
    /// for the full `epochs`.
    pub patience: Option<usize>,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-3,
            weight_decay: 0.0,
            lr_decay: 0.9,
            patience: None,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(DlError::Config("bad training schedule".into()));
        }
        Ok(())
    }
}
