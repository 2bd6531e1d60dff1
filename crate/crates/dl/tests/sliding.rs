use proptest::prelude::*;
use rhomap_core::Volume3D;
use rhomap_dl::unet::{build_unet, coverage_counts, window_starts};
use rhomap_dl::{infer_unet_sliding, DlError, UNetConfig};
use rhomap_nn::{Network, Tensor};

const SPACING: [f64; 3] = [1.0, 1.0, 1.0];

fn net(window: usize) -> Network {
    let cfg = UNetConfig {
        depth: 2,
        base_channels: 4,
        patch: window,
        window,
        ..UNetConfig::default()
    };
    build_unet(&cfg, 10.0, 30.0, 9).unwrap()
}

fn textured(n: usize, nz: usize, phase: f64) -> Volume3D {
    let data = (0..n * n * nz).map(|i| ((i as f64) * 0.173 + phase).sin() * 0.4 - 0.2).collect();
    Volume3D::from_data([n, n, nz], SPACING, data).unwrap()
}

fn window_of(v: &Volume3D, z: usize, y0: usize, x0: usize, w: usize) -> Vec<f64> {
    let [nx, _, _] = v.dims();
    let plane = v.slice(z);
    (0..w).flat_map(|r| (0..w).map(move |c| plane[(y0 + r) * nx + x0 + c])).collect()
}

#[test]
fn single_window_equals_direct_forward() {
    let n = 64;
    let net = net(64);
    let (a, b) = (textured(n, 2, 0.0), textured(n, 2, 1.3));
    let out = infer_unet_sliding(&net, &a, &b, 64, 32).unwrap();
    for z in 0..2 {
        let mut x = a.slice(z).to_vec();
        x.extend_from_slice(b.slice(z));
        let direct = net.predict(&Tensor::from_vec([1, 2, n, n], x).unwrap()).unwrap();
        assert_eq!(out.slice(z), direct.data());
    }
}

#[test]
fn overlapping_windows_are_averaged() {
    let (n, w, s) = (96, 64, 32);
    assert_eq!(window_starts(n, w, s), vec![0, 32]);
    let counts = coverage_counts(n, n, w, s);
    let mut seen: Vec<u32> = counts.clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, vec![1, 2, 4]);
    assert_eq!(counts[0], 1);
    assert_eq!(counts[40], 2);
    assert_eq!(counts[40 * n + 40], 4);

    let net = net(w);
    let (a, b) = (textured(n, 1, 0.2), textured(n, 1, 2.1));
    let out = infer_unet_sliding(&net, &a, &b, w, s).unwrap();
    let mut sum = vec![0.0; n * n];
    let mut cnt = vec![0u32; n * n];
    for y0 in [0, 32] {
        for x0 in [0, 32] {
            let mut x = window_of(&a, 0, y0, x0, w);
            x.extend(window_of(&b, 0, y0, x0, w));
            let tile = net.predict(&Tensor::from_vec([1, 2, w, w], x).unwrap()).unwrap();
            for r in 0..w {
                for c in 0..w {
                    sum[(y0 + r) * n + x0 + c] += tile.data()[r * w + c];
                    cnt[(y0 + r) * n + x0 + c] += 1;
                }
            }
        }
    }
    assert_eq!(cnt, counts);
    for (i, (&o, (&s, &c))) in out.data().iter().zip(sum.iter().zip(&cnt)).enumerate() {
        assert!((o - s / f64::from(c)).abs() < 1e-12, "voxel {i}");
    }
}

#[test]
fn constant_input_gives_constant_output() {
    let net = net(32);
    let a = Volume3D::new([80, 72, 2], SPACING, -0.1).unwrap();
    let b = Volume3D::new([80, 72, 2], SPACING, -0.4).unwrap();
    let out = infer_unet_sliding(&net, &a, &b, 32, 16).unwrap();
    let first = out.data()[0];
    for &v in out.data() {
        assert!((v - first).abs() < 1e-6);
    }
}

#[test]
fn small_slices_are_padded_and_tiny_ones_rejected() {
    let net = net(32);
    let (a, b) = (textured(20, 1, 0.0), textured(20, 1, 0.5));
    let out = infer_unet_sliding(&net, &a, &b, 32, 16).unwrap();
    assert_eq!(out.dims(), [20, 20, 1]);
    assert!(matches!(infer_unet_sliding(&net, &a, &b, 32, 33), Err(DlError::Config(_))));
    let (a, b) = (textured(6, 1, 0.0), textured(6, 1, 0.5));
    assert!(matches!(
        infer_unet_sliding(&net, &a, &b, 32, 16),
        Err(DlError::VolumeTooSmall { .. })
    ));
}

proptest! {
    #[test]
    fn every_voxel_is_covered(n in 8usize..150, w in 8usize..80, s in 1usize..80) {
        let s = s.min(w);
        let starts = window_starts(n.max(w), w, s);
        prop_assert_eq!(starts[0], 0);
        prop_assert_eq!(*starts.last().unwrap() + w, n.max(w));
        prop_assert!(starts.windows(2).all(|p| p[1] > p[0] && p[1] - p[0] <= s));
        let counts = coverage_counts(n, n, w, s);
        prop_assert!(counts.iter().all(|&c| c >= 1));
    }

    #[test]
    fn output_is_convex_combination_of_tiles(phase in 0.0f64..6.0) {
        let (n, w, s) = (40, 32, 8);
        let net = net(w);
        let (a, b) = (textured(n, 1, phase), textured(n, 1, phase + 0.7));
        let out = infer_unet_sliding(&net, &a, &b, w, s).unwrap();
        let starts = window_starts(n, w, s);
        let mut lo = vec![f64::INFINITY; n * n];
        let mut hi = vec![f64::NEG_INFINITY; n * n];
        for &y0 in &starts {
            for &x0 in &starts {
                let mut x = window_of(&a, 0, y0, x0, w);
                x.extend(window_of(&b, 0, y0, x0, w));
                let tile = net.predict(&Tensor::from_vec([1, 2, w, w], x).unwrap()).unwrap();
                for r in 0..w {
                    for c in 0..w {
                        let j = (y0 + r) * n + x0 + c;
                        lo[j] = lo[j].min(tile.data()[r * w + c]);
                        hi[j] = hi[j].max(tile.data()[r * w + c]);
                    }
                }
            }
        }
        for (j, &o) in out.data().iter().enumerate() {
            prop_assert!(o >= lo[j] - 1e-9 && o <= hi[j] + 1e-9);
        }
    }
}
