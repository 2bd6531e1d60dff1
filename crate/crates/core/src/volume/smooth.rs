//! Per-slice truncated Gaussian smoothing with edge replication.
//!
//! The 2D kernel on the `(2r+1)^2` square is the outer product of the
//! normalized 1D kernel, so it is applied separably along x then y.

use super::Volume3D;
use crate::{Error, Exec, Result};

/// Half-width used by preprocessing.
pub const DEFAULT_RADIUS: usize = 3;
/// Standard deviation (voxels) used by preprocessing.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// Normalized 1D kernel of length `2 * radius + 1`.
pub fn gaussian_kernel_1d(radius: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("gaussian sigma must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(Error::param("gaussian radius must be at least 1"));
    }
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    Ok(k)
}

pub fn gaussian_smooth(vol: &Volume3D, radius: usize, sigma: f64) -> Result<Volume3D> {
    gaussian_smooth_with(vol, radius, sigma, Exec::default())
}

pub fn gaussian_smooth_with(vol: &Volume3D, radius: usize, sigma: f64, exec: Exec) -> Result<Volume3D> {
    let kernel = gaussian_kernel_1d(radius, sigma)?;
    let [nx, ny, _] = vol.dims();
    let mut out = vol.data().to_vec();
    exec.for_each_chunk(&mut out, nx * ny, |_, slice| smooth_slice(slice, nx, ny, &kernel));
    vol.with_data(out)
}

fn smooth_slice(slice: &mut [f64], nx: usize, ny: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; slice.len()];
    for y in 0..ny {
        let row = &slice[y * nx..(y + 1) * nx];
        for x in 0..nx {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                acc += w * row[clamp(x as isize + j as isize - r, nx)];
            }
            tmp[y * nx + x] = acc;
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                acc += w * tmp[clamp(y as isize + j as isize - r, ny) * nx + x];
            }
            slice[y * nx + x] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol(nx: usize, ny: usize, nz: usize, data: Vec<f64>) -> Volume3D {
        Volume3D::from_data([nx, ny, nz], [1.0; 3], data).unwrap()
    }

    /// Direct evaluation of the 2D Gaussian on the truncated square, normalized.
    fn direct_kernel_2d(radius: isize, sigma: f64) -> Vec<Vec<f64>> {
        let mut k: Vec<Vec<f64>> = (-radius..=radius)
            .map(|y| {
                (-radius..=radius)
                    .map(|x| (-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp())
                    .collect()
            })
            .collect();
        let total: f64 = k.iter().flatten().sum();
        k.iter_mut().flatten().for_each(|w| *w /= total);
        k
    }

    #[test]
    fn constant_is_preserved() {
        let v = Volume3D::new([9, 7, 2], [1.0; 3], 3.25).unwrap();
        let s = gaussian_smooth(&v, 3, 1.0).unwrap();
        assert!(s.data().iter().all(|&x| (x - 3.25).abs() < 1e-12));
    }

    #[test]
    fn impulse_response_matches_direct_kernel() {
        let n = 15;
        let mut data = vec![0.0; n * n];
        data[7 * n + 7] = 1.0;
        let s = gaussian_smooth(&vol(n, n, 1, data), 3, 1.0).unwrap();
        let k = direct_kernel_2d(3, 1.0);
        // frozen from the direct evaluation: e^0 / (sum over 7x7 of e^{-(x^2+y^2)/2})
        assert!((k[3][3] - 0.159_241_125_690_702_42).abs() < 1e-12, "{}", k[3][3]);
        for dy in -3isize..=3 {
            for dx in -3isize..=3 {
                let got = s.get((7 + dx) as usize, (7 + dy) as usize, 0);
                assert!((got - k[(dy + 3) as usize][(dx + 3) as usize]).abs() < 1e-15);
            }
        }
        assert_eq!(s.get(7 + 4, 7, 0), 0.0);
    }

    #[test]
    fn invalid_parameters() {
        let v = Volume3D::new([4, 4, 1], [1.0; 3], 1.0).unwrap();
        assert!(gaussian_smooth(&v, 3, 0.0).is_err());
        assert!(gaussian_smooth(&v, 3, -1.0).is_err());
        assert!(gaussian_smooth(&v, 0, 1.0).is_err());
    }

    #[test]
    fn slices_are_independent() {
        let mut data = vec![0.0; 2 * 25];
        data[12] = 1.0;
        let s = gaussian_smooth(&vol(5, 5, 2, data), 3, 1.0).unwrap();
        assert!(s.slice(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn policies_agree() {
        let data: Vec<f64> = (0..(12 * 10 * 3)).map(|i| ((i * 37) % 11) as f64).collect();
        let v = vol(12, 10, 3, data);
        let a = gaussian_smooth_with(&v, 3, 1.0, Exec::Sequential).unwrap();
        let b = gaussian_smooth_with(&v, 3, 1.0, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    fn slice_strategy() -> impl Strategy<Value = Volume3D> {
        (1usize..12, 1usize..12, 1usize..3).prop_flat_map(|(nx, ny, nz)| {
            proptest::collection::vec(-100.0f64..100.0, nx * ny * nz)
                .prop_map(move |d| vol(nx, ny, nz, d))
        })
    }

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    }

    proptest! {
        #[test]
        fn linear(u in slice_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let v = u.map(|x| (x * 7.3 + seed as f64).sin() * 50.0).unwrap();
            let combo = u.zip_map(&v, |p, q| a * p + b * q).unwrap();
            let lhs = gaussian_smooth(&combo, 3, 1.0).unwrap();
            let su = gaussian_smooth(&u, 3, 1.0).unwrap();
            let sv = gaussian_smooth(&v, 3, 1.0).unwrap();
            let scale = u.data().iter().chain(v.data()).fold(1.0f64, |m, x| m.max(x.abs())) * (a.abs() + b.abs() + 1.0);
            for i in 0..lhs.len() {
                let rhs = a * su.data()[i] + b * sv.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn variance_does_not_increase(v in slice_strategy()) {
            let s = gaussian_smooth(&v, 3, 1.0).unwrap();
            prop_assert!(variance(s.data()) <= variance(v.data()) * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn slice_mean_preserved_with_constant_border(
            nx in 7usize..16, ny in 7usize..16, border in -10.0f64..10.0,
            interior in proptest::collection::vec(-50.0f64..50.0, 256),
        ) {
            let mut data = vec![border; nx * ny];
            for y in 3..ny - 3 {
                for x in 3..nx - 3 {
                    data[y * nx + x] = interior[(y * 16 + x) % 256];
                }
            }
            let v = vol(nx, ny, 1, data);
            let s = gaussian_smooth(&v, 3, 1.0).unwrap();
            let m_in = v.mean();
            let m_out = s.mean();
            prop_assert!((m_in - m_out).abs() <= 1e-9 * m_in.abs().max(1.0));
        }
    }
}
