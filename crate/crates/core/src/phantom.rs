//! Synthetic knee-like phantoms with known T1rho.
//!
//! Each subject is a stack of sagittal-like slices: a body ellipse in air, a
//! femoral condyle (bone disk), a thin curved cartilage band hugging the lower
//! half of the condyle, a joint-fluid film below the cartilage, a tibial
//! plateau and soft tissue elsewhere. The cartilage band is the ROI.
//!
//! The PD-weighted surrogate reuses the baseline intensity but applies a
//! per-tissue contrast gain, a smooth multiplicative bias field and an
//! independent noise draw, which models the gap between a separately
//! acquired anatomical scan and a true TSL=0 image.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::derive_seed;
use crate::signal::{add_noise, signal_unchecked, NoiseModel};
use crate::volume::{Dims, Spacing};
use crate::{Error, Exec, Result, RoiMask, TslSchedule, Volume3D};

/// Smallest in-plane size that fits the geometry template.
pub const MIN_IN_PLANE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Tissue {
    Air = 0,
    Bone = 1,
    SoftTissue = 2,
    Fluid = 3,
    Cartilage = 4,
}

impl Tissue {
    pub fn from_label(label: u8) -> Option<Tissue> {
        Some(match label {
            0 => Tissue::Air,
            1 => Tissue::Bone,
            2 => Tissue::SoftTissue,
            3 => Tissue::Fluid,
            4 => Tissue::Cartilage,
            _ => return None,
        })
    }
}

/// Per-tissue scalar (gains, relative intensities).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueValues {
    pub air: f64,
    pub bone: f64,
    pub soft_tissue: f64,
    pub fluid: f64,
    pub cartilage: f64,
}

impl TissueValues {
    pub fn uniform(v: f64) -> Self {
        Self {
            air: v,
            bone: v,
            soft_tissue: v,
            fluid: v,
            cartilage: v,
        }
    }

    pub fn get(&self, t: Tissue) -> f64 {
        match t {
            Tissue::Air => self.air,
            Tissue::Bone => self.bone,
            Tissue::SoftTissue => self.soft_tissue,
            Tissue::Fluid => self.fluid,
            Tissue::Cartilage => self.cartilage,
        }
    }
}

/// T1rho ranges (ms) for the non-cartilage tissues; one value is drawn per subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundT1rho {
    pub bone: (f64, f64),
    pub soft_tissue: (f64, f64),
    pub fluid: (f64, f64),
}

impl Default for BackgroundT1rho {
    fn default() -> Self {
        Self {
            bone: (38.0, 42.0),
            soft_tissue: (29.0, 31.0),
            fluid: (85.0, 95.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    pub n_subjects: usize,
    pub seed: u64,
    pub schedule: TslSchedule,
    pub t1rho_range_ms: (f64, f64),
    pub background_t1rho_ms: BackgroundT1rho,
    /// Range of the per-subject cartilage baseline intensity.
    pub i0_range: (f64, f64),
    /// Baseline intensity of each tissue relative to cartilage.
    pub relative_i0: TissueValues,
    /// Noise sigma as a fraction of the mean cartilage baseline intensity.
    pub noise_sigma: f64,
    pub noise_model: NoiseModel,
    /// Peak absolute value of the surrogate's multiplicative bias field.
    pub bias_amplitude: f64,
    /// Polynomial order of the bias field: 1 (planar) or 2 (adds quadratic terms).
    pub bias_order: u8,
    pub pd_contrast_gain: TissueValues,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 8],
            spacing: [0.8, 1.0, 3.0],
            n_subjects: 10,
            seed: 2025,
            schedule: TslSchedule::standard(),
            t1rho_range_ms: (30.0, 70.0),
            background_t1rho_ms: BackgroundT1rho::default(),
            i0_range: (80.0, 120.0),
            relative_i0: TissueValues {
                air: 0.0,
                bone: 0.35,
                soft_tissue: 0.55,
                fluid: 1.3,
                cartilage: 1.0,
            },
            noise_sigma: 0.02,
            noise_model: NoiseModel::Rician,
            bias_amplitude: 0.3,
            bias_order: 1,
            pd_contrast_gain: TissueValues {
                air: 1.0,
                bone: 0.9,
                soft_tissue: 1.0,
                fluid: 1.0,
                cartilage: 1.1,
            },
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.t1rho_range_ms;
        if !(lo > 0.0 && hi <= 200.0 && lo < hi) {
            return Err(Error::param(format!("cartilage T1rho range must satisfy 0 < low < high <= 200, got {lo}..{hi}")));
        }
        let bg = &self.background_t1rho_ms;
        for (name, (a, b)) in [("bone", bg.bone), ("soft tissue", bg.soft_tissue), ("fluid", bg.fluid)] {
            if !(a > 0.0 && a <= b) {
                return Err(Error::param(format!("{name} T1rho range invalid: {a}..{b}")));
            }
        }
        let (a, b) = self.i0_range;
        if !(a > 0.0 && a <= b) {
            return Err(Error::param(format!("i0 range invalid: {a}..{b}")));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::param("noise_sigma must be non-negative"));
        }
        if !(self.bias_amplitude >= 0.0 && self.bias_amplitude < 1.0) {
            return Err(Error::param("bias_amplitude must lie in [0, 1)"));
        }
        if !(1..=2).contains(&self.bias_order) {
            return Err(Error::param(format!("bias_order must be 1 or 2, got {}", self.bias_order)));
        }
        if self.n_subjects == 0 {
            return Err(Error::param("n_subjects must be positive"));
        }
        if self.dims[0] < MIN_IN_PLANE || self.dims[1] < MIN_IN_PLANE {
            return Err(Error::param(format!(
                "dims {:?} too small for the phantom geometry (need >= {MIN_IN_PLANE} voxels in-plane)",
                self.dims
            )));
        }
        if self.dims[2] == 0 {
            return Err(Error::NonPositiveDimension(self.dims));
        }
        Ok(())
    }

    pub fn subject_id(index: usize) -> String {
        format!("sub-{index:03}")
    }
}

/// One simulated subject: ground truth, the multi-TSL acquisition and the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomBundle {
    pub subject_id: String,
    pub truth_t1rho: Volume3D,
    pub i0_truth: Volume3D,
    pub schedule: TslSchedule,
    /// Noisy magnitude images aligned with `schedule.tsl_ms()`.
    pub weighted: Vec<Volume3D>,
    pub pd_surrogate: Volume3D,
    pub roi: RoiMask,
    /// Tissue label per voxel (see [`Tissue`]).
    pub tissue: Vec<u8>,
    /// Absolute noise sigma used for every image of this subject.
    pub sigma_abs: f64,
}

impl PhantomBundle {
    pub fn weighted_at(&self, tsl_ms: f64) -> Option<&Volume3D> {
        self.schedule.position(tsl_ms).map(|i| &self.weighted[i])
    }
}

/// Per-subject random geometry and tissue parameters.
struct Anatomy {
    body_c: (f64, f64),
    body_r: (f64, f64),
    femur_c: (f64, f64),
    femur_r: f64,
    thick0: f64,
    thick_phase: f64,
    tibia_gap: f64,
    cart_base: f64,
    cart_amp: f64,
    cart_phase: f64,
    bg_t1rho: [f64; 3],
    i0_base: f64,
    i0_phase: (f64, f64),
    bias_coef: [f64; 6],
}

impl Anatomy {
    fn draw(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Self {
        let [nx, ny, _] = spec.dims;
        let s = nx.min(ny) as f64;
        let (lo, hi) = spec.t1rho_range_ms;
        let cart_amp = ((hi - lo) * 0.2).min(10.0) * rng.random_range(0.5..1.0);
        let cart_base = rng.random_range((lo + cart_amp + 0.05 * (hi - lo))..(hi - cart_amp - 0.05 * (hi - lo)));
        let bg = &spec.background_t1rho_ms;
        let mut uniform = |(a, b): (f64, f64)| if a < b { rng.random_range(a..b) } else { a };
        let bg_t1rho = [uniform(bg.bone), uniform(bg.soft_tissue), uniform(bg.fluid)];
        let i0_base = uniform(spec.i0_range);
        Self {
            body_c: (nx as f64 / 2.0 + rng.random_range(-1.0..1.0), ny as f64 / 2.0 + rng.random_range(-1.0..1.0)),
            body_r: (nx as f64 * rng.random_range(0.43..0.47), ny as f64 * rng.random_range(0.44..0.48)),
            femur_c: (
                nx as f64 * (0.5 + rng.random_range(-0.03..0.03)),
                ny as f64 * (0.22 + rng.random_range(-0.02..0.02)),
            ),
            femur_r: s * rng.random_range(0.22..0.26),
            thick0: rng.random_range(6.0..7.0),
            thick_phase: rng.random_range(0.0..2.0 * PI),
            tibia_gap: rng.random_range(3.0..5.0),
            cart_base,
            cart_amp,
            cart_phase: rng.random_range(0.0..2.0 * PI),
            bg_t1rho,
            i0_base,
            i0_phase: (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)),
            bias_coef: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        }
    }

    /// Cartilage thickness (voxels) along the band, within [5, 8].
    fn thickness(&self, angle: f64) -> f64 {
        (self.thick0 + (3.0 * angle + self.thick_phase).sin()).clamp(5.0, 8.0)
    }

    /// Tissue label, T1rho and relative-intensity modulation at a voxel centre.
    fn voxel(&self, spec: &PhantomSpec, x: usize, y: usize, z: usize) -> (Tissue, f64, f64) {
        let [nx, ny, nz] = spec.dims;
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let zf = (z as f64 + 0.5) / nz as f64;
        let bx = (px - self.body_c.0) / self.body_r.0;
        let by = (py - self.body_c.1) / self.body_r.1;
        let smooth = ((px / nx as f64) * 2.0 * PI + self.i0_phase.0).sin() * 0.5
            + ((py / ny as f64) * 2.0 * PI + self.i0_phase.1).cos() * 0.5;
        if bx * bx + by * by > 1.0 {
            return (Tissue::Air, 1.0, 1.0);
        }
        let r = self.femur_r * (1.0 + 0.04 * (PI * zf).sin());
        let (dx, dy) = (px - self.femur_c.0, py - self.femur_c.1);
        let d = dx.hypot(dy);
        // angle measured from straight down, positive towards +x
        let angle = dx.atan2(dy);
        let lower = angle.abs() < 0.45 * PI;
        let thick = self.thickness(angle);
        let tibia_top = self.femur_c.1 + r + 8.0 + self.tibia_gap + 0.02 * dx * dx / r;
        let (bg_bone, bg_soft, bg_fluid) = (self.bg_t1rho[0], self.bg_t1rho[1], self.bg_t1rho[2]);
        if d < r {
            (Tissue::Bone, bg_bone, 1.0 + 0.05 * smooth)
        } else if lower && d < r + thick {
            // deeper cartilage has lower T1rho than the articular surface
            let depth = ((d - r) / thick).clamp(0.0, 1.0);
            let s = 0.6 * (2.0 * angle + self.cart_phase).sin() + 0.4 * (2.0 * depth - 1.0);
            (Tissue::Cartilage, self.cart_base + self.cart_amp * s, 1.0 + 0.08 * smooth)
        } else if lower && d < r + thick + 2.0 {
            (Tissue::Fluid, bg_fluid, 1.0 + 0.03 * smooth)
        } else if py >= tibia_top {
            (Tissue::Bone, bg_bone, 1.0 + 0.05 * smooth)
        } else {
            (Tissue::SoftTissue, bg_soft, 1.0 + 0.05 * smooth)
        }
    }

    /// Zero-mean polynomial over the normalized field of view.
    fn raw_bias(&self, dims: Dims, order: u8, x: usize, y: usize, z: usize) -> f64 {
        let u = 2.0 * (x as f64 + 0.5) / dims[0] as f64 - 1.0;
        let v = 2.0 * (y as f64 + 0.5) / dims[1] as f64 - 1.0;
        let w = 2.0 * (z as f64 + 0.5) / dims[2] as f64 - 1.0;
        let c = &self.bias_coef;
        let linear = c[0] * u + c[1] * v + 0.3 * c[5] * w;
        if order < 2 {
            return linear;
        }
        linear + c[2] * u * v + c[3] * 0.5 * (3.0 * u * u - 1.0) + c[4] * 0.5 * (3.0 * v * v - 1.0)
    }
}

/// Renders subject `subject_index` of the cohort described by `spec`.
pub fn generate_phantom(spec: &PhantomSpec, subject_index: usize) -> Result<PhantomBundle> {
    generate_phantom_with(spec, subject_index, Exec::default())
}

pub fn generate_phantom_with(spec: &PhantomSpec, subject_index: usize, exec: Exec) -> Result<PhantomBundle> {
    spec.validate()?;
    if subject_index >= spec.n_subjects {
        return Err(Error::param(format!(
            "subject index {subject_index} out of range for {} subjects",
            spec.n_subjects
        )));
    }
    let subject_seed = derive_seed(spec.seed, subject_index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let anatomy = Anatomy::draw(spec, &mut rng);

    let dims = spec.dims;
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let mut tissue = vec![0u8; n];
    let mut t1rho = vec![0.0; n];
    let mut i0 = vec![0.0; n];
    let mut bias = vec![0.0; n];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                let (t, t1, modulation) = anatomy.voxel(spec, x, y, z);
                tissue[i] = t as u8;
                t1rho[i] = t1;
                i0[i] = anatomy.i0_base * spec.relative_i0.get(t) * modulation;
                bias[i] = anatomy.raw_bias(dims, spec.bias_order, x, y, z);
            }
        }
    }
    let peak = bias.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let scale = if peak > 0.0 { spec.bias_amplitude / peak } else { 0.0 };
    bias.iter_mut().for_each(|b| *b *= scale);

    let roi = RoiMask::new(dims, tissue.iter().map(|&t| (t == Tissue::Cartilage as u8) as u8).collect())?;
    if roi.count() == 0 {
        return Err(Error::param("phantom geometry produced an empty cartilage ROI"));
    }
    let truth_t1rho = Volume3D::from_data(dims, spec.spacing, t1rho)?;
    let i0_truth = Volume3D::from_data(dims, spec.spacing, i0)?;
    let cartilage_i0 = i0_truth.roi_mean(&roi)?;
    let sigma_abs = spec.noise_sigma * cartilage_i0;

    let weighted = spec
        .schedule
        .tsl_ms()
        .iter()
        .enumerate()
        .map(|(k, &tsl)| {
            let clean = i0_truth.zip_map(&truth_t1rho, |a, t| signal_unchecked(a, t, tsl))?;
            add_noise(&clean, spec.noise_model, sigma_abs, derive_seed(subject_seed, 100 + k as u64), exec)
        })
        .collect::<Result<Vec<_>>>()?;

    let pd_clean = i0_truth.with_data(
        i0_truth
            .data()
            .iter()
            .zip(&tissue)
            .zip(&bias)
            .map(|((&a, &t), &b)| a * spec.pd_contrast_gain.get(Tissue::from_label(t).unwrap()) * (1.0 + b))
            .collect(),
    )?;
    let pd_surrogate = add_noise(&pd_clean, spec.noise_model, sigma_abs, derive_seed(subject_seed, 99), exec)?;

    Ok(PhantomBundle {
        subject_id: PhantomSpec::subject_id(subject_index),
        truth_t1rho,
        i0_truth,
        schedule: spec.schedule.clone(),
        weighted,
        pd_surrogate,
        roi,
        tissue,
        sigma_abs,
    })
}

/// Every subject of the cohort, generated in parallel under `exec`.
pub fn generate_cohort(spec: &PhantomSpec, exec: Exec) -> Result<Vec<PhantomBundle>> {
    spec.validate()?;
    exec.map(spec.n_subjects, |i| generate_phantom_with(spec, i, Exec::Sequential))
        .into_iter()
        .collect()
}
