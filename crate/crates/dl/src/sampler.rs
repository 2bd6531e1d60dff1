//! ROI-biased random patch extraction with augmentation.
//!
//! Draw `i` uses its own RNG stream derived from the sampler seed, so any
//! range of draws can be generated in parallel and in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rhomap_core::exec::derive_seed;
use rhomap_core::Exec;
use rhomap_nn::Tensor;

use crate::config::{AugmentConfig, LossMaskMode, UNetConfig};
use crate::data::{encode_pair, subject_reference};
use crate::{DlError, Result, SubjectData};

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub subject: usize,
    pub z: usize,
    /// Source (y, x) of the patch centre, after translation.
    pub center: [usize; 2],
    /// Two encoded channels, `2 * p * p`.
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub loss_mask: Vec<f64>,
    pub roi: Vec<f64>,
}

struct Prepared<'a> {
    data: &'a SubjectData,
    reference: f64,
    loss_mask: Vec<bool>,
    roi_voxels: Vec<usize>,
}

pub struct PatchSampler<'a> {
    subjects: Vec<Prepared<'a>>,
    patch: usize,
    roi_bias: f64,
    augment: Option<AugmentConfig>,
    masked: bool,
    seed: u64,
}

/// Voxels the loss is computed on for a subject.
pub(crate) fn loss_mask(s: &SubjectData, mode: LossMaskMode, y_min: f64, y_max: f64) -> Vec<bool> {
    (0..s.target.len())
        .map(|i| {
            let t = s.target.data()[i];
            let usable = s.target_valid.contains(i) && t >= y_min && t <= y_max;
            match mode {
                LossMaskMode::Unmasked => usable,
                LossMaskMode::RoiMasked => usable && s.roi.contains(i),
            }
        })
        .collect()
}

impl<'a> PatchSampler<'a> {
    pub fn new(
        subjects: impl IntoIterator<Item = &'a SubjectData>,
        cfg: &UNetConfig,
        seed: u64,
        augment: bool,
    ) -> Result<Self> {
        let mut prepared = Vec::new();
        for s in subjects {
            let [nx, ny, _] = s.i0.dims();
            if cfg.patch > nx || cfg.patch > ny {
                return Err(DlError::PatchTooLarge {
                    patch: cfg.patch,
                    nx,
                    ny,
                });
            }
            let loss_mask = loss_mask(s, cfg.loss_mask_mode, cfg.y_min, cfg.y_max);
            if !loss_mask.iter().any(|&m| m) {
                return Err(DlError::EmptyMask(s.id.clone()));
            }
            prepared.push(Prepared {
                data: s,
                reference: subject_reference(&s.i0, &s.roi, &s.id)?,
                loss_mask,
                roi_voxels: s.roi.indices().collect(),
            });
        }
        if prepared.is_empty() {
            return Err(DlError::EmptyDataset);
        }
        Ok(Self {
            subjects: prepared,
            patch: cfg.patch,
            roi_bias: cfg.roi_bias,
            augment: augment.then(|| cfg.augment.clone()),
            masked: cfg.loss_mask_mode == LossMaskMode::RoiMasked,
            seed,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn sample(&self, draw: u64) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, draw));
        let si = rng.random_range(0..self.subjects.len());
        let s = &self.subjects[si];
        let [nx, ny, nz] = s.data.i0.dims();

        let (z, mut cy, mut cx) = if rng.random_bool(self.roi_bias) {
            let v = s.roi_voxels[rng.random_range(0..s.roi_voxels.len())];
            (v / (nx * ny), (v / nx) % ny, v % nx)
        } else {
            (rng.random_range(0..nz), rng.random_range(0..ny), rng.random_range(0..nx))
        };

        let (mut cos, mut sin, mut flip_y, mut flip_x, mut noise_frac) = (1.0, 0.0, false, false, 0.0);
        if let Some(aug) = &self.augment {
            let t = aug.max_translation_px as i64;
            cy = (cy as i64 + rng.random_range(-t..=t)).clamp(0, ny as i64 - 1) as usize;
            cx = (cx as i64 + rng.random_range(-t..=t)).clamp(0, nx as i64 - 1) as usize;
            let theta = rng.random_range(-aug.max_rotation_deg..=aug.max_rotation_deg).to_radians();
            (cos, sin) = (theta.cos(), theta.sin());
            flip_y = rng.random_bool(aug.flip_p);
            flip_x = rng.random_bool(aug.flip_p);
            noise_frac = rng.random_range(0.0..=aug.max_noise_frac);
        }

        let p = self.patch;
        let half = (p / 2) as f64;
        let slice = z * nx * ny;
        let mut src = Vec::with_capacity(p * p);
        for r in 0..p {
            for c in 0..p {
                let rr = if flip_y { p - 1 - r } else { r };
                let cc = if flip_x { p - 1 - c } else { c };
                let (dy, dx) = (rr as f64 - half, cc as f64 - half);
                let sy = (cy as f64 + cos * dy - sin * dx).round().clamp(0.0, (ny - 1) as f64) as usize;
                let sx = (cx as f64 + sin * dy + cos * dx).round().clamp(0.0, (nx - 1) as f64) as usize;
                src.push(slice + sy * nx + sx);
            }
        }

        let mut raw0: Vec<f64> = src.iter().map(|&i| s.data.i0.data()[i]).collect();
        let mut rawk: Vec<f64> = src.iter().map(|&i| s.data.ik.data()[i]).collect();
        if noise_frac > 0.0 {
            let peak = raw0.iter().chain(&rawk).fold(0.0f64, |m, &v| m.max(v));
            if let Ok(normal) = Normal::new(0.0, noise_frac * peak) {
                raw0.iter_mut().chain(rawk.iter_mut()).for_each(|v| *v += normal.sample(&mut rng));
            }
        }
        let roi: Vec<f64> = src.iter().map(|&i| f64::from(s.data.roi.labels()[i])).collect();
        let pairs: Vec<[f64; 2]> = raw0.iter().zip(&rawk).map(|(&a, &b)| encode_pair(a, b, s.reference)).collect();
        let mut input = Vec::with_capacity(2 * p * p);
        for ch in 0..2 {
            input.extend(pairs.iter().zip(&roi).map(|(e, &m)| if self.masked { e[ch] * m } else { e[ch] }));
        }
        Patch {
            subject: si,
            z,
            center: [cy, cx],
            input,
            target: src.iter().map(|&i| s.data.target.data()[i]).collect(),
            loss_mask: src.iter().map(|&i| f64::from(u8::from(s.loss_mask[i]))).collect(),
            roi,
        }
    }

    pub fn sample_range(&self, start: u64, n: usize, exec: Exec) -> Vec<Patch> {
        exec.map(n, |i| self.sample(start + i as u64))
    }
}

/// Stacks patches into `(input, target, loss_mask)` tensors.
pub fn to_batch(patches: &[Patch]) -> Result<(Tensor, Tensor, Tensor)> {
    let n = patches.len();
    let pp = patches.first().map_or(0, |p| p.target.len());
    let p = (pp as f64).sqrt() as usize;
    let mut x = Vec::with_capacity(n * 2 * pp);
    let mut y = Vec::with_capacity(n * pp);
    let mut m = Vec::with_capacity(n * pp);
    for patch in patches {
        x.extend_from_slice(&patch.input);
        y.extend_from_slice(&patch.target);
        m.extend_from_slice(&patch.loss_mask);
    }
    Ok((
        Tensor::from_vec([n, 2, p, p], x)?,
        Tensor::from_vec([n, 1, p, p], y)?,
        Tensor::from_vec([n, 1, p, p], m)?,
    ))
}
