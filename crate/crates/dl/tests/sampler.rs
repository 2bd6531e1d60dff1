use rhomap_core::{Exec, RoiMask, Volume3D};
use rhomap_dl::sampler::to_batch;
use rhomap_dl::{AugmentConfig, PatchSampler, SubjectData, UNetConfig};

const SPACING: [f64; 3] = [1.0, 1.0, 1.0];

/// 48x40x3 subject whose ROI is a small block in one corner.
fn subject() -> SubjectData {
    let dims = [48, 40, 3];
    let n = 48 * 40 * 3;
    let idx = |i: usize| (i % 48, (i / 48) % 40);
    let roi = RoiMask::from_fn(dims, |i| {
        let (x, y) = idx(i);
        (4..9).contains(&x) && (30..34).contains(&y)
    })
    .unwrap();
    let i0: Vec<f64> = (0..n).map(|i| 80.0 + (i % 7) as f64).collect();
    let ik: Vec<f64> = i0.iter().map(|v| v * 0.8).collect();
    let t: Vec<f64> = (0..n).map(|i| 30.0 + (i % 11) as f64).collect();
    SubjectData::new(
        "s",
        Volume3D::from_data(dims, SPACING, i0).unwrap(),
        Volume3D::from_data(dims, SPACING, ik).unwrap(),
        Volume3D::from_data(dims, SPACING, t).unwrap(),
        RoiMask::filled(dims, true).unwrap(),
        roi,
    )
    .unwrap()
}

fn cfg(roi_bias: f64) -> UNetConfig {
    UNetConfig {
        patch: 16,
        roi_bias,
        ..UNetConfig::default()
    }
}

#[test]
fn roi_biased_centres_stay_near_the_roi() {
    let s = subject();
    let sampler = PatchSampler::new([&s], &cfg(1.0), 1, true).unwrap();
    let roi: Vec<(i64, i64, usize)> = s.roi.indices().map(|i| ((i % 48) as i64, ((i / 48) % 40) as i64, i / (48 * 40))).collect();
    for draw in 0..2000 {
        let p = sampler.sample(draw);
        let [cy, cx] = p.center;
        let near = roi
            .iter()
            .any(|&(x, y, z)| z == p.z && (x - cx as i64).abs() <= 8 && (y - cy as i64).abs() <= 8);
        assert!(near, "draw {draw}: centre {:?} slice {}", p.center, p.z);
    }
}

#[test]
fn draws_are_reproducible_and_order_free() {
    let s = subject();
    let a = PatchSampler::new([&s], &cfg(0.5), 42, true).unwrap();
    let b = PatchSampler::new([&s], &cfg(0.5), 42, true).unwrap();
    let seq = a.sample_range(10, 16, Exec::Sequential);
    let par = b.sample_range(10, 16, Exec::Parallel);
    assert_eq!(seq, par);
    assert_eq!(a.sample(17), seq[7]);
    let other = PatchSampler::new([&s], &cfg(0.5), 43, true).unwrap();
    assert_ne!(other.sample_range(10, 16, Exec::Sequential), seq);
}

#[test]
fn patch_shapes() {
    let s = subject();
    let sampler = PatchSampler::new([&s], &cfg(0.8), 3, true).unwrap();
    let patches = sampler.sample_range(0, 5, Exec::Sequential);
    for p in &patches {
        assert_eq!(p.input.len(), 2 * 16 * 16);
        assert_eq!(p.target.len(), 16 * 16);
        assert_eq!(p.loss_mask.len(), 16 * 16);
        assert_eq!(p.roi.len(), 16 * 16);
    }
    let (x, y, m) = to_batch(&patches).unwrap();
    assert_eq!(x.shape(), [5, 2, 16, 16]);
    assert_eq!(y.shape(), [5, 1, 16, 16]);
    assert_eq!(m.shape(), [5, 1, 16, 16]);
}

#[test]
fn noise_touches_inputs_only() {
    let s = subject();
    let quiet = UNetConfig {
        augment: AugmentConfig {
            max_noise_frac: 0.0,
            ..AugmentConfig::default()
        },
        ..cfg(0.8)
    };
    let clean = PatchSampler::new([&s], &quiet, 8, true).unwrap();
    let noisy = PatchSampler::new([&s], &cfg(0.8), 8, true).unwrap();
    let mut differs = false;
    for draw in 0..20 {
        let (a, b) = (clean.sample(draw), noisy.sample(draw));
        assert_eq!(a.target, b.target);
        assert_eq!(a.loss_mask, b.loss_mask);
        assert_eq!(a.roi, b.roi);
        assert_eq!(a.center, b.center);
        differs |= a.input != b.input;
    }
    assert!(differs);
}

#[test]
fn without_augmentation_patches_are_plain_crops() {
    let s = subject();
    let sampler = PatchSampler::new([&s], &cfg(0.0), 5, false).unwrap();
    for draw in 0..20 {
        let p = sampler.sample(draw);
        let [cy, cx] = p.center;
        let (y0, x0) = (cy as i64 - 8, cx as i64 - 8);
        for r in 0..16 {
            for c in 0..16 {
                let sy = (y0 + r).clamp(0, 39) as usize;
                let sx = (x0 + c).clamp(0, 47) as usize;
                assert_eq!(p.target[(r * 16 + c) as usize], s.target.get(sx, sy, p.z));
            }
        }
    }
}
