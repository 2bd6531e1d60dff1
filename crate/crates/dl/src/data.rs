//! Per-subject training data, input encoding and ROI voxel bookkeeping.

use rhomap_core::volume::Spacing;
use rhomap_core::{RoiMask, Volume3D};

use crate::{DlError, Result};

/// Intensities below `LOG_FLOOR * ref` are clamped before the log.
pub const LOG_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SubjectData {
    pub id: String,
    /// Baseline-like image (TSL 0 or the PD surrogate).
    pub i0: Volume3D,
    /// Spin-lock-weighted image.
    pub ik: Volume3D,
    /// Ground-truth T1rho, ms.
    pub target: Volume3D,
    pub target_valid: RoiMask,
    pub roi: RoiMask,
}

impl SubjectData {
    pub fn new(
        id: impl Into<String>,
        i0: Volume3D,
        ik: Volume3D,
        target: Volume3D,
        target_valid: RoiMask,
        roi: RoiMask,
    ) -> Result<Self> {
        let dims = i0.dims();
        ik.ensure_same_dims(dims)?;
        target.ensure_same_dims(dims)?;
        target_valid.ensure_pairs_with(&i0)?;
        roi.ensure_pairs_with(&i0)?;
        Ok(Self {
            id: id.into(),
            i0,
            ik,
            target,
            target_valid,
            roi,
        })
    }

    /// ROI mean of the baseline-like image; the scale both channels are
    /// divided by before the log.
    pub fn reference(&self) -> Result<f64> {
        subject_reference(&self.i0, &self.roi, &self.id)
    }

    pub fn encoded_inputs(&self, masked: bool) -> Result<(Volume3D, Volume3D)> {
        encode_inputs(&self.i0, &self.ik, &self.roi, masked)
    }
}

pub(crate) fn subject_reference(i0: &Volume3D, roi: &RoiMask, id: &str) -> Result<f64> {
    if roi.count() == 0 {
        return Err(DlError::EmptyMask(id.to_string()));
    }
    let r = i0.roi_mean(roi)?;
    if r > 0.0 {
        Ok(r)
    } else {
        // degenerate all-dark ROI; any positive scale keeps the log finite
        Ok(1.0)
    }
}

#[inline]
pub fn log_encode(x: f64, reference: f64) -> f64 {
    (x.max(LOG_FLOOR * reference) / reference).ln()
}

/// Network features of one voxel: `[ln(i0 / ref), ln(i0 / ik)]`, both
/// intensities floored as in [`log_encode`].
#[inline]
pub fn encode_pair(i0: f64, ik: f64, reference: f64) -> [f64; 2] {
    let a = log_encode(i0, reference);
    [a, a - log_encode(ik, reference)]
}

/// Encodes both channels with [`encode_pair`]; with `masked` every voxel
/// outside the ROI is then set to exactly 0.
pub fn encode_inputs(i0: &Volume3D, ik: &Volume3D, roi: &RoiMask, masked: bool) -> Result<(Volume3D, Volume3D)> {
    ik.ensure_same_dims(i0.dims())?;
    let r = subject_reference(i0, roi, "input")?;
    let mut a = i0.map(|x| log_encode(x, r))?;
    let mut b = i0.zip_map(ik, |x, y| encode_pair(x, y, r)[1])?;
    if masked {
        a = apply_roi_mask(&a, roi)?;
        b = apply_roi_mask(&b, roi)?;
    }
    Ok((a, b))
}

/// Voxel-wise `vol * roi`.
pub fn apply_roi_mask(vol: &Volume3D, roi: &RoiMask) -> Result<Volume3D> {
    Ok(vol.apply_mask(roi)?)
}

/// ROI voxel values in row-major (z, y, x) order.
pub fn extract_voxels(vol: &Volume3D, roi: &RoiMask) -> Result<Vec<f64>> {
    roi.ensure_pairs_with(vol)?;
    Ok(roi.indices().map(|i| vol.data()[i]).collect())
}

/// Inverse of [`extract_voxels`]; voxels outside the ROI are 0.
pub fn reassemble_voxels(values: &[f64], roi: &RoiMask, spacing: Spacing) -> Result<Volume3D> {
    let expected = roi.count();
    if values.len() != expected {
        return Err(DlError::LengthMismatch {
            expected,
            got: values.len(),
        });
    }
    let mut data = vec![0.0; roi.len()];
    for (i, &v) in roi.indices().zip(values) {
        data[i] = v;
    }
    Ok(Volume3D::from_data(roi.dims(), spacing, data)?)
}

/// Splits `0..n` into (train, validation) with a seeded shuffle. At least one
/// subject is held out when `fraction > 0` and `n >= 2`.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let n_val = if fraction > 0.0 && n >= 2 {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Mean and standard deviation (floored at 1) of `values`, used to put the
/// network output on the target scale.
pub(crate) fn target_scale(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, std.max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SP: Spacing = [1.0, 1.0, 1.0];

    #[test]
    fn validation_split() {
        let (t, v) = split_validation(8, 0.1, 3);
        assert_eq!((t.len(), v.len()), (7, 1));
        assert_eq!(split_validation(8, 0.1, 3), (t, v));
        assert_eq!(split_validation(1, 0.1, 3), (vec![0], vec![]));
        assert_eq!(split_validation(5, 0.0, 3).1.len(), 0);
    }

    #[test]
    fn reassemble_three_voxels() {
        let roi = RoiMask::from_fn([3, 2, 1], |i| i == 1 || i == 3 || i == 4).unwrap();
        let v = reassemble_voxels(&[7.0, 8.0, 9.0], &roi, SP).unwrap();
        assert_eq!(v.data(), &[0.0, 7.0, 0.0, 8.0, 9.0, 0.0]);
    }

    #[test]
    fn extract_reassemble_round_trip() {
        let roi = RoiMask::from_fn([4, 3, 2], |i| i % 3 == 0).unwrap();
        let vol = Volume3D::from_data([4, 3, 2], SP, (0..24).map(|i| i as f64 * 1.5).collect()).unwrap();
        let vals = extract_voxels(&vol, &roi).unwrap();
        let back = reassemble_voxels(&vals, &roi, SP).unwrap();
        assert_eq!(back, apply_roi_mask(&vol, &roi).unwrap());
    }

    #[test]
    fn reassemble_length_mismatch() {
        let roi = RoiMask::from_fn([2, 2, 1], |i| i < 2).unwrap();
        assert!(matches!(
            reassemble_voxels(&[1.0], &roi, SP),
            Err(DlError::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn mask_cases() {
        let vol = Volume3D::from_data([2, 2, 1], SP, vec![1.0, -2.0, 3.0, 4.5]).unwrap();
        let ones = RoiMask::filled([2, 2, 1], true).unwrap();
        let zeros = RoiMask::filled([2, 2, 1], false).unwrap();
        let checker = RoiMask::from_fn([2, 2, 1], |i| (i % 2 + i / 2) % 2 == 0).unwrap();
        assert_eq!(apply_roi_mask(&vol, &ones).unwrap(), vol);
        assert!(apply_roi_mask(&vol, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(apply_roi_mask(&vol, &checker).unwrap().data(), &[1.0, 0.0, 0.0, 4.5]);
        let other = RoiMask::filled([2, 1, 1], true).unwrap();
        assert!(apply_roi_mask(&vol, &other).is_err());
    }

    #[test]
    fn masked_encoding_zeroes_background() {
        let i0 = Volume3D::from_data([3, 1, 1], SP, vec![100.0, 50.0, 0.0]).unwrap();
        let ik = Volume3D::from_data([3, 1, 1], SP, vec![60.0, 30.0, 0.0]).unwrap();
        let roi = RoiMask::from_fn([3, 1, 1], |i| i == 0).unwrap();
        let (a, b) = encode_inputs(&i0, &ik, &roi, true).unwrap();
        assert_eq!(a.data(), &[0.0, 0.0, 0.0]);
        // ratio channel: ln(i0 / ik)
        assert!((b.data()[0] - (100.0f64 / 60.0).ln()).abs() < 1e-15);
        assert_eq!(b.data()[1..], [0.0, 0.0]);
        let (a, _) = encode_inputs(&i0, &ik, &roi, false).unwrap();
        assert!((a.data()[1] - 0.5f64.ln()).abs() < 1e-15);
        assert!((a.data()[2] - LOG_FLOOR.ln()).abs() < 1e-15);
    }
}
