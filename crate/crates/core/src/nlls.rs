//! Classical mono-exponential fitting: closed-form two-point inversion and a
//! bounded Levenberg-Marquardt solver for two or more spin-lock times.
//!
//! Both produce a [`FitResult`] whose invalid voxels hold the nearest bound
//! (never NaN) and carry `valid = 0`.

use serde::{Deserialize, Serialize};

use crate::{Error, Exec, Result, RoiMask, TslSchedule, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitBounds {
    pub t1rho_min_ms: f64,
    pub t1rho_max_ms: f64,
    pub i0_min: f64,
    /// `None` means four times the maximum input intensity.
    pub i0_max: Option<f64>,
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            t1rho_min_ms: 1.0,
            t1rho_max_ms: 200.0,
            i0_min: 0.0,
            i0_max: None,
        }
    }
}

/// Bounds with `i0_max` resolved against the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedBounds {
    pub t_min: f64,
    pub t_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl ResolvedBounds {
    #[inline]
    fn clamp_t(&self, t: f64) -> f64 {
        if t.is_nan() {
            self.t_max
        } else {
            t.clamp(self.t_min, self.t_max)
        }
    }

    #[inline]
    fn clamp_a(&self, a: f64) -> f64 {
        if a.is_nan() {
            self.a_min
        } else {
            a.clamp(self.a_min, self.a_max)
        }
    }

    /// Snaps an estimate to whichever T1rho bound is closer.
    #[inline]
    fn nearest_t_bound(&self, t: f64) -> f64 {
        if t.is_nan() || (t - self.t_min).abs() > (self.t_max - t).abs() {
            self.t_max
        } else {
            self.t_min
        }
    }
}

impl FitBounds {
    pub fn resolve(&self, data_max: f64) -> Result<ResolvedBounds> {
        let a_max = self.i0_max.unwrap_or(4.0 * data_max.max(0.0));
        let b = ResolvedBounds {
            t_min: self.t1rho_min_ms,
            t_max: self.t1rho_max_ms,
            a_min: self.i0_min,
            a_max,
        };
        if !(b.t_min > 0.0 && b.t_min < b.t_max && b.t_max.is_finite()) {
            return Err(Error::param(format!("invalid T1rho bounds {}..{}", b.t_min, b.t_max)));
        }
        if !(b.a_min < b.a_max && b.a_max.is_finite()) {
            return Err(Error::param(format!("invalid I0 bounds {}..{}", b.a_min, b.a_max)));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub t1rho_map: Volume3D,
    pub i0_map: Volume3D,
    /// 1 where the fit converged strictly inside the bounds.
    pub valid: RoiMask,
    /// Accepted-plus-rejected LM iterations per voxel (LM only).
    pub iterations: Option<Vec<u32>>,
    /// Final sum of squared residuals per voxel (LM only).
    pub residual: Option<Volume3D>,
}

fn ensure_same(images: &[&Volume3D]) -> Result<()> {
    let first = images[0].dims();
    images.iter().try_for_each(|v| v.ensure_same_dims(first))
}

/// Closed-form inversion of the decay model from two images.
///
/// `t1rho = (tslk - tsl0) / ln(i0 / ik)` where `i0 > ik > 0`; everything else
/// (no decay, growth, non-positive intensities) and out-of-bounds estimates
/// are clamped and flagged invalid.
pub fn fit_two_point(
    i0_img: &Volume3D,
    ik_img: &Volume3D,
    tsl0_ms: f64,
    tslk_ms: f64,
    bounds: &FitBounds,
) -> Result<FitResult> {
    ensure_same(&[i0_img, ik_img])?;
    if !(tsl0_ms >= 0.0 && tslk_ms > tsl0_ms) {
        return Err(Error::param(format!(
            "two-point fit needs tslk > tsl0 >= 0, got {tsl0_ms} and {tslk_ms}"
        )));
    }
    let rb = bounds.resolve(i0_img.max().max(ik_img.max()))?;
    let dt = tslk_ms - tsl0_ms;
    let n = i0_img.len();
    let mut t_map = Vec::with_capacity(n);
    let mut a_map = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (&s0, &sk) in i0_img.data().iter().zip(ik_img.data()) {
        let (t, ok) = if s0 > 0.0 && sk > 0.0 && sk < s0 {
            let t = dt / (s0 / sk).ln();
            let c = rb.clamp_t(t);
            (c, c == t && t > rb.t_min && t < rb.t_max)
        } else if s0 > 0.0 && sk <= 0.0 {
            (rb.t_min, false)
        } else {
            (rb.t_max, false)
        };
        let a = rb.clamp_a(s0 * (tsl0_ms / t).exp());
        t_map.push(t);
        a_map.push(a);
        valid.push(ok as u8);
    }
    Ok(FitResult {
        t1rho_map: i0_img.with_data(t_map)?,
        i0_map: i0_img.with_data(a_map)?,
        valid: RoiMask::new(i0_img.dims(), valid)?,
        iterations: None,
        residual: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Convergence threshold on the largest relative parameter change.
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Outcome of a single-voxel fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelFit {
    pub t1rho: f64,
    pub i0: f64,
    pub sse: f64,
    pub iterations: u32,
    pub converged: bool,
    /// The log-linear initializer produced a decaying estimate.
    pub initialized: bool,
    pub valid: bool,
}

#[inline]
fn sse(y: &[f64], tsl: &[f64], a: f64, t: f64) -> f64 {
    y.iter()
        .zip(tsl)
        .map(|(&yk, &tk)| {
            let r = yk - a * (-tk / t).exp();
            r * r
        })
        .sum()
}

/// Least-squares line through `(tsl, ln y)`; `None` if any `y <= 0` or the slope is not negative.
fn log_linear_init(y: &[f64], tsl: &[f64]) -> Option<(f64, f64)> {
    if y.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let n = y.len() as f64;
    let mx = tsl.iter().sum::<f64>() / n;
    let my = y.iter().map(|v| v.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&t, &v) in tsl.iter().zip(y) {
        sxy += (t - mx) * (v.ln() - my);
        sxx += (t - mx) * (t - mx);
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return None;
    }
    let t = -1.0 / slope;
    let a = (my - slope * mx).exp();
    (t.is_finite() && a.is_finite()).then_some((a, t))
}

/// Fits `y_k = a * exp(-tsl_k / t)` for one voxel.
///
/// When `trace` is given, the SSE after initialization and after every
/// accepted step is appended to it.
pub fn fit_voxel_lm(
    y: &[f64],
    tsl: &[f64],
    bounds: &ResolvedBounds,
    cfg: &LmConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> VoxelFit {
    let init = log_linear_init(y, tsl);
    let (mut a, mut t) = match init {
        Some((a, t)) => (bounds.clamp_a(a), bounds.clamp_t(t)),
        None => (
            0.5 * (bounds.a_min + bounds.a_max),
            0.5 * (bounds.t_min + bounds.t_max),
        ),
    };
    let mut cost = sse(y, tsl, a, t);
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(cost);
    }
    let mut lambda = cfg.lambda0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        // normal equations of the residual r = y - f
        let (mut haa, mut hat, mut htt, mut ga, mut gt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&yk, &tk) in y.iter().zip(tsl) {
            let e = (-tk / t).exp();
            let ja = e;
            let jt = a * e * tk / (t * t);
            let r = yk - a * e;
            haa += ja * ja;
            hat += ja * jt;
            htt += jt * jt;
            ga += ja * r;
            gt += jt * r;
        }
        let da_scale = if haa > 0.0 { haa } else { 1.0 };
        let dt_scale = if htt > 0.0 { htt } else { 1.0 };
        let mut accepted = None;
        while lambda < 1e20 {
            let m11 = haa + lambda * da_scale;
            let m22 = htt + lambda * dt_scale;
            let det = m11 * m22 - hat * hat;
            if det > 0.0 && det.is_finite() {
                let step_a = (m22 * ga - hat * gt) / det;
                let step_t = (m11 * gt - hat * ga) / det;
                let a_new = bounds.clamp_a(a + step_a);
                let t_new = bounds.clamp_t(t + step_t);
                let cost_new = sse(y, tsl, a_new, t_new);
                if cost_new < cost {
                    accepted = Some((a_new, t_new, cost_new));
                    break;
                }
            }
            lambda *= cfg.lambda_up;
        }
        let Some((a_new, t_new, cost_new)) = accepted else {
            // no descent direction left: stationary up to rounding
            converged = true;
            break;
        };
        let rel = ((a_new - a).abs() / a.abs().max(f64::MIN_POSITIVE)).max((t_new - t).abs() / t);
        a = a_new;
        t = t_new;
        cost = cost_new;
        lambda = (lambda / cfg.lambda_down).max(1e-12);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(cost);
        }
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    let valid = init.is_some() && converged && t > bounds.t_min && t < bounds.t_max;
    let t1rho = if valid { t } else { bounds.nearest_t_bound(t) };
    VoxelFit {
        t1rho,
        i0: a,
        sse: cost,
        iterations,
        converged,
        initialized: init.is_some(),
        valid,
    }
}

/// Voxel-wise bounded LM fit over a multi-TSL acquisition.
///
/// `images` are aligned with `schedule.tsl_ms()`.
pub fn fit_lm(
    images: &[&Volume3D],
    schedule: &TslSchedule,
    bounds: &FitBounds,
    cfg: &LmConfig,
    exec: Exec,
) -> Result<FitResult> {
    schedule.require_fit()?;
    if images.len() != schedule.len() {
        return Err(Error::param(format!(
            "{} images for {} spin-lock times",
            images.len(),
            schedule.len()
        )));
    }
    ensure_same(images)?;
    let data_max = images.iter().map(|v| v.max()).fold(f64::NEG_INFINITY, f64::max);
    let rb = bounds.resolve(data_max)?;
    let tsl = schedule.tsl_ms();
    let reference = images[0];
    let n = reference.len();
    const CHUNK: usize = 4096;
    let chunks = exec.map(n.div_ceil(CHUNK), |c| {
        let mut y = vec![0.0; tsl.len()];
        (c * CHUNK..((c + 1) * CHUNK).min(n))
            .map(|i| {
                for (yk, img) in y.iter_mut().zip(images) {
                    *yk = img.data()[i];
                }
                fit_voxel_lm(&y, tsl, &rb, cfg, None)
            })
            .collect::<Vec<_>>()
    });
    let fits: Vec<VoxelFit> = chunks.into_iter().flatten().collect();
    Ok(FitResult {
        t1rho_map: reference.with_data(fits.iter().map(|f| f.t1rho).collect())?,
        i0_map: reference.with_data(fits.iter().map(|f| f.i0).collect())?,
        valid: RoiMask::new(reference.dims(), fits.iter().map(|f| f.valid as u8).collect())?,
        iterations: Some(fits.iter().map(|f| f.iterations).collect()),
        residual: Some(reference.with_data(fits.iter().map(|f| f.sse).collect())?),
    })
}
