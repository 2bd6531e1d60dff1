use rhomap_core::metrics::{aggregate, evaluate, make_folds, ReportRow};
use rhomap_core::nlls::{fit_lm, fit_two_point, FitBounds, LmConfig};
use rhomap_core::phantom::{generate_cohort, generate_phantom, PhantomSpec};
use rhomap_core::volume::{gaussian_smooth, load_mask, load_volume, save_mask, save_volume_as, Dtype};
use rhomap_core::{Exec, Volume3D};

fn spec() -> PhantomSpec {
    PhantomSpec {
        dims: [48, 48, 2],
        n_subjects: 5,
        ..PhantomSpec::default()
    }
}

#[test]
fn noiseless_ground_truth_recovers_phantom() {
    let s = PhantomSpec {
        noise_sigma: 0.0,
        bias_amplitude: 0.0,
        ..spec()
    };
    let b = generate_phantom(&s, 1).unwrap();
    let refs: Vec<&Volume3D> = b.weighted.iter().collect();
    let fit = fit_lm(&refs, &b.schedule, &FitBounds::default(), &LmConfig::default(), Exec::Sequential).unwrap();
    for i in b.roi.indices() {
        let (t, f) = (b.truth_t1rho.data()[i], fit.t1rho_map.data()[i]);
        assert!((f - t).abs() / t < 1e-6, "voxel {i}: {f} vs {t}");
        assert!(fit.valid.contains(i));
    }
    let m = evaluate(&fit.t1rho_map, &b.truth_t1rho, &b.roi).unwrap();
    assert!(m.mape_pct < 1e-4);
}

#[test]
fn noisy_smoothed_fit_tracks_truth() {
    let b = generate_phantom(&spec(), 2).unwrap();
    let smoothed: Vec<Volume3D> = b.weighted.iter().map(|v| gaussian_smooth(v, 3, 1.0).unwrap()).collect();
    let refs: Vec<&Volume3D> = smoothed.iter().collect();
    let fit = fit_lm(&refs, &b.schedule, &FitBounds::default(), &LmConfig::default(), Exec::Parallel).unwrap();
    let m = evaluate(&fit.t1rho_map, &b.truth_t1rho, &b.roi).unwrap();
    // smoothing blurs the thin band into its neighbours; the regional mean survives
    assert!(m.rpe_pct < 5.0, "{m:?}");
}

#[test]
fn surrogate_two_point_is_biased_but_baseline_is_not() {
    let b = generate_phantom(&spec(), 0).unwrap();
    let t0 = b.weighted_at(0.0).unwrap();
    let t50 = b.weighted_at(50.0).unwrap();
    let bounds = FitBounds::default();
    let base = fit_two_point(t0, t50, 0.0, 50.0, &bounds).unwrap();
    let pd = fit_two_point(&b.pd_surrogate, t50, 0.0, 50.0, &bounds).unwrap();
    let e_base = evaluate(&base.t1rho_map, &b.truth_t1rho, &b.roi).unwrap();
    let e_pd = evaluate(&pd.t1rho_map, &b.truth_t1rho, &b.roi).unwrap();
    assert!(e_base.rpe_pct < 3.0, "{e_base:?}");
    assert!(e_pd.mape_pct > e_base.mape_pct, "{e_pd:?} vs {e_base:?}");
}

#[test]
fn phantom_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = generate_phantom(&spec(), 3).unwrap();
    let p = dir.path().join("t.vol");
    save_volume_as(&b.truth_t1rho, &p, Dtype::F64).unwrap();
    assert_eq!(load_volume(&p).unwrap(), b.truth_t1rho);
    let p = dir.path().join("roi.mask");
    save_mask(&b.roi, b.truth_t1rho.spacing(), &p).unwrap();
    assert_eq!(load_mask(&p).unwrap(), b.roi);
}

#[test]
fn cohort_report_rows_aggregate_per_fold_plan() {
    let s = spec();
    let cohort = generate_cohort(&s, Exec::Parallel).unwrap();
    let ids: Vec<String> = cohort.iter().map(|b| b.subject_id.clone()).collect();
    let plan = make_folds(&ids, 4).unwrap();
    plan.check_hygiene().unwrap();
    let bounds = FitBounds::default();
    let rows: Vec<ReportRow> = cohort
        .iter()
        .map(|b| {
            let fit = fit_two_point(b.weighted_at(0.0).unwrap(), b.weighted_at(50.0).unwrap(), 0.0, 50.0, &bounds).unwrap();
            let m = evaluate(&fit.t1rho_map, &b.truth_t1rho, &b.roi).unwrap();
            ReportRow::new(&b.subject_id, plan.fold_of(&b.subject_id).unwrap(), "t0-50", "nlls_2pt", m)
        })
        .collect();
    let summary = aggregate(&rows).unwrap();
    assert_eq!(summary.len(), 1);
    let mean = rows.iter().map(|r| r.rpe_pct).sum::<f64>() / rows.len() as f64;
    assert!((summary[0].rpe_pct.mean - mean).abs() < 1e-12);
}
