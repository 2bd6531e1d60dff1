//! Voxel grids and the masks and schedules that travel with them.
//!
//! Storage is row-major with `x` fastest: voxel `(x, y, z)` lives at
//! `(z * ny + y) * nx + x`. A slice is the contiguous `nx * ny` block at fixed
//! `z`.

mod io;
mod smooth;

pub use io::{load_mask, load_volume, save_mask, save_volume, save_volume_as, Dtype};
pub use smooth::{gaussian_kernel_1d, gaussian_smooth, gaussian_smooth_with, DEFAULT_RADIUS, DEFAULT_SIGMA};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

fn check_dims(dims: Dims) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::NonPositiveDimension(dims));
    }
    Ok(dims[0] * dims[1] * dims[2])
}

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidSpacing(spacing))
    }
}

/// A scalar voxel grid with physical spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: Dims, spacing: Spacing, fill: f64) -> Result<Self> {
        let n = check_dims(dims)?;
        check_spacing(spacing)?;
        if !fill.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self {
            dims,
            spacing,
            data: vec![fill; n],
        })
    }

    pub fn from_data(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Result<Self> {
        let n = check_dims(dims)?;
        check_spacing(spacing)?;
        if data.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, spacing, data })
    }

    /// A volume with the same geometry as `self` and the given data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::from_data(self.dims, self.spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    /// Element-wise map. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise combination of two volumes with equal dims.
    pub fn zip_map(&self, other: &Volume3D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_dims(other.dims)?;
        self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn ensure_same_dims(&self, other: Dims) -> Result<()> {
        if self.dims == other {
            Ok(())
        } else {
            Err(Error::DimsMismatch {
                left: self.dims,
                right: other,
            })
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean over the voxels labelled 1 in `roi`.
    pub fn roi_mean(&self, roi: &RoiMask) -> Result<f64> {
        roi.ensure_pairs_with(self)?;
        let n = roi.count();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(roi.indices().map(|i| self.data[i]).sum::<f64>() / n as f64)
    }

    /// Voxel-wise product with the mask: values outside the ROI become 0.
    pub fn apply_mask(&self, roi: &RoiMask) -> Result<Self> {
        roi.ensure_pairs_with(self)?;
        self.with_data(
            self.data
                .iter()
                .zip(roi.labels())
                .map(|(&v, &l)| if l == 1 { v } else { 0.0 })
                .collect(),
        )
    }
}

/// Binary region-of-interest labels (0 = background, 1 = ROI).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    dims: Dims,
    labels: Vec<u8>,
}

impl RoiMask {
    pub fn new(dims: Dims, labels: Vec<u8>) -> Result<Self> {
        let n = check_dims(dims)?;
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(index) = labels.iter().position(|&l| l > 1) {
            return Err(Error::InvalidLabel {
                index,
                label: labels[index],
            });
        }
        Ok(Self { dims, labels })
    }

    pub fn filled(dims: Dims, label: bool) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(Self {
            dims,
            labels: vec![label as u8; n],
        })
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize) -> bool) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(Self {
            dims,
            labels: (0..n).map(|i| f(i) as u8).collect(),
        })
    }

    /// Interprets a volume holding exactly 0.0 / 1.0 as a mask.
    pub fn from_volume(vol: &Volume3D) -> Result<Self> {
        let labels = vol
            .data()
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::InvalidLabel { index, label: 2 })
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(vol.dims(), labels)
    }

    pub fn to_volume(&self, spacing: Spacing) -> Result<Volume3D> {
        Volume3D::from_data(
            self.dims,
            spacing,
            self.labels.iter().map(|&l| l as f64).collect(),
        )
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.labels[index] == 1
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Linear indices of ROI voxels in storage order, i.e. row-major by `(z, y, x)`.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i)
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims[0] * self.dims[1];
        &self.labels[z * n..(z + 1) * n]
    }

    pub fn slice_count(&self, z: usize) -> usize {
        self.slice(z).iter().filter(|&&l| l == 1).count()
    }

    pub fn and(&self, other: &RoiMask) -> Result<RoiMask> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(RoiMask {
            dims: self.dims,
            labels: self
                .labels
                .iter()
                .zip(&other.labels)
                .map(|(&a, &b)| a & b)
                .collect(),
        })
    }

    pub fn ensure_pairs_with(&self, vol: &Volume3D) -> Result<()> {
        vol.ensure_same_dims(self.dims)
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.count() == 0 {
            Err(Error::EmptyMask)
        } else {
            Ok(())
        }
    }
}

/// Ordered spin-lock times (ms) plus the spin-lock frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TslSchedule {
    tsl_ms: Vec<f64>,
    #[serde(default = "default_fsl")]
    fsl_hz: f64,
}

fn default_fsl() -> f64 {
    300.0
}

impl TslSchedule {
    /// Sorts the given times; rejects negatives, non-finite values and duplicates.
    pub fn new(mut tsl_ms: Vec<f64>, fsl_hz: f64) -> Result<Self> {
        if tsl_ms.is_empty() {
            return Err(Error::param("spin-lock schedule is empty"));
        }
        if tsl_ms.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::param("spin-lock times must be finite and non-negative"));
        }
        tsl_ms.sort_by(f64::total_cmp);
        if tsl_ms.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("duplicate spin-lock time"));
        }
        Ok(Self { tsl_ms, fsl_hz })
    }

    /// The four-point acquisition: 0, 10, 30, 50 ms at 300 Hz.
    pub fn standard() -> Self {
        Self {
            tsl_ms: vec![0.0, 10.0, 30.0, 50.0],
            fsl_hz: 300.0,
        }
    }

    pub fn tsl_ms(&self) -> &[f64] {
        &self.tsl_ms
    }

    pub fn fsl_hz(&self) -> f64 {
        self.fsl_hz
    }

    pub fn len(&self) -> usize {
        self.tsl_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsl_ms.is_empty()
    }

    pub fn position(&self, tsl: f64) -> Option<usize> {
        self.tsl_ms.iter().position(|&t| t == tsl)
    }

    pub fn require_fit(&self) -> Result<()> {
        if self.tsl_ms.len() < 2 {
            Err(Error::param("fitting needs at least 2 distinct spin-lock times"))
        } else {
            Ok(())
        }
    }
}
