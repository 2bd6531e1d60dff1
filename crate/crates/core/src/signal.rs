//! Spin-lock decay model and magnitude-image noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::derive_seed;
use crate::{Error, Exec, Result, Volume3D};

/// `i0 * exp(-tsl / t1rho)`.
pub fn signal(i0: f64, t1rho_ms: f64, tsl_ms: f64) -> Result<f64> {
    if !(t1rho_ms > 0.0) {
        return Err(Error::param(format!("t1rho must be positive, got {t1rho_ms}")));
    }
    if i0 < 0.0 || tsl_ms < 0.0 {
        return Err(Error::param("i0 and tsl must be non-negative"));
    }
    Ok(signal_unchecked(i0, t1rho_ms, tsl_ms))
}

#[inline]
pub fn signal_unchecked(i0: f64, t1rho_ms: f64, tsl_ms: f64) -> f64 {
    i0 * (-tsl_ms / t1rho_ms).exp()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Magnitude of a complex signal with i.i.d. Gaussian real/imaginary noise.
    #[default]
    Rician,
    /// Additive real Gaussian noise, clipped at 0. Debugging aid.
    Gaussian,
}

/// Adds Rician noise: `sqrt((s + g1*sigma)^2 + (g2*sigma)^2)`.
pub fn rician_noise(vol: &Volume3D, sigma_abs: f64, seed: u64) -> Result<Volume3D> {
    add_noise(vol, NoiseModel::Rician, sigma_abs, seed, Exec::default())
}

/// Noise with a per-slice RNG stream, so the result depends only on `seed`.
pub fn add_noise(vol: &Volume3D, model: NoiseModel, sigma_abs: f64, seed: u64, exec: Exec) -> Result<Volume3D> {
    if !(sigma_abs >= 0.0 && sigma_abs.is_finite()) {
        return Err(Error::param(format!("noise sigma must be non-negative, got {sigma_abs}")));
    }
    if sigma_abs == 0.0 {
        return Ok(vol.clone());
    }
    let mut out = vol.data().to_vec();
    exec.for_each_chunk(&mut out, vol.slice_len(), |z, slice| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, z as u64));
        for v in slice.iter_mut() {
            let g1: f64 = StandardNormal.sample(&mut rng);
            let g2: f64 = StandardNormal.sample(&mut rng);
            *v = match model {
                NoiseModel::Rician => (*v + g1 * sigma_abs).hypot(g2 * sigma_abs),
                NoiseModel::Gaussian => (*v + g1 * sigma_abs).max(0.0),
            };
        }
    });
    vol.with_data(out)
}
