//! Cohort generation, smoothing and the four-point ground-truth fit.

use rhomap_core::nlls::{fit_lm, fit_two_point, FitResult};
use rhomap_core::phantom::{generate_phantom_with, PhantomBundle};
use rhomap_core::volume::gaussian_smooth_with;
use rhomap_core::{Exec, Volume3D};
use rhomap_dl::SubjectData;

use crate::config::{Combo, ExperimentConfig, I0Source};
use crate::Result;

#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub bundle: PhantomBundle,
    /// Smoothed weighted images, aligned with the schedule.
    pub smoothed: Vec<Volume3D>,
    pub smoothed_pd: Volume3D,
    /// Four-point LM fit on the smoothed images.
    pub ground_truth: FitResult,
}

impl PreparedSubject {
    pub fn id(&self) -> &str {
        &self.bundle.subject_id
    }

    fn smoothed_at(&self, tsl: f64) -> &Volume3D {
        let k = self.bundle.schedule.position(tsl).expect("combo TSLs are validated against the schedule");
        &self.smoothed[k]
    }

    /// Preprocessed (baseline, weighted) images for `combo`.
    pub fn combo_inputs(&self, combo: &Combo) -> (&Volume3D, &Volume3D) {
        let i0 = match combo.i0 {
            I0Source::PdSurrogate => &self.smoothed_pd,
            I0Source::Tsl0 => self.smoothed_at(0.0),
        };
        (i0, self.smoothed_at(combo.ik_tsl_ms))
    }

    pub fn subject_data(&self, combo: &Combo) -> Result<SubjectData> {
        let (i0, ik) = self.combo_inputs(combo);
        Ok(SubjectData::new(
            self.id(),
            i0.clone(),
            ik.clone(),
            self.ground_truth.t1rho_map.clone(),
            self.ground_truth.valid.clone(),
            self.bundle.roi.clone(),
        )?)
    }

    /// Closed-form two-point reference, treating the baseline as TSL 0.
    pub fn fit_two_point(&self, combo: &Combo, cfg: &ExperimentConfig) -> Result<FitResult> {
        let (i0, ik) = self.combo_inputs(combo);
        Ok(fit_two_point(i0, ik, 0.0, combo.ik_tsl_ms, &cfg.bounds)?)
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub subjects: Vec<PreparedSubject>,
}

impl Cohort {
    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id().to_string()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&PreparedSubject> {
        self.subjects.iter().find(|s| s.id() == id)
    }
}

pub fn prepare_subject(cfg: &ExperimentConfig, index: usize, exec: Exec) -> Result<PreparedSubject> {
    let bundle = generate_phantom_with(&cfg.phantom, index, exec)?;
    let smooth = |v: &Volume3D| -> Result<Volume3D> {
        if cfg.smoothing.enabled {
            Ok(gaussian_smooth_with(v, cfg.smoothing.radius, cfg.smoothing.sigma, exec)?)
        } else {
            Ok(v.clone())
        }
    };
    let smoothed = bundle.weighted.iter().map(smooth).collect::<Result<Vec<_>>>()?;
    let smoothed_pd = smooth(&bundle.pd_surrogate)?;
    let refs: Vec<&Volume3D> = smoothed.iter().collect();
    let ground_truth = fit_lm(&refs, &bundle.schedule, &cfg.bounds, &cfg.lm, exec)?;
    Ok(PreparedSubject {
        bundle,
        smoothed,
        smoothed_pd,
        ground_truth,
    })
}

pub fn prepare_cohort(cfg: &ExperimentConfig, exec: Exec) -> Result<Cohort> {
    cfg.validate()?;
    let subjects = (0..cfg.phantom.n_subjects)
        .map(|i| prepare_subject(cfg, i, exec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cohort { subjects })
}
