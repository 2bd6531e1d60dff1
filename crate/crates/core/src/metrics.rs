//! Error metrics over an ROI, subject-level fold plans and report aggregation.
//!
//! Voxel-wise: MAE (ms) and MAPE (%). Regional: RE (ms) and RPE (%), the
//! absolute difference between ROI means and its percentage of the true mean.
//! Metrics are always computed per subject and only then averaged.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, RoiMask, Volume3D};

/// RPE target below which a result counts as acceptable, in percent.
pub const RPE_TARGET_PCT: f64 = 5.0;

pub const N_FOLDS: usize = 5;

fn roi_pairs<'a>(
    pred: &'a Volume3D,
    truth: &'a Volume3D,
    roi: &'a RoiMask,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    pred.ensure_same_dims(truth.dims())?;
    roi.ensure_pairs_with(pred)?;
    roi.ensure_non_empty()?;
    Ok(roi.indices().map(|i| (pred.data()[i], truth.data()[i])))
}

pub fn mae(pred: &Volume3D, truth: &Volume3D, roi: &RoiMask) -> Result<f64> {
    let n = roi.count() as f64;
    Ok(roi_pairs(pred, truth, roi)?.map(|(p, t)| (t - p).abs()).sum::<f64>() / n)
}

pub fn mape(pred: &Volume3D, truth: &Volume3D, roi: &RoiMask) -> Result<f64> {
    let n = roi.count() as f64;
    let mut acc = 0.0;
    for (p, t) in roi_pairs(pred, truth, roi)? {
        if t == 0.0 {
            return Err(Error::param("MAPE undefined: zero ground truth inside the ROI"));
        }
        acc += ((t - p) / t).abs();
    }
    Ok(100.0 * acc / n)
}

fn roi_means(pred: &Volume3D, truth: &Volume3D, roi: &RoiMask) -> Result<(f64, f64)> {
    let n = roi.count() as f64;
    let (sp, st) = roi_pairs(pred, truth, roi)?.fold((0.0, 0.0), |(a, b), (p, t)| (a + p, b + t));
    Ok((sp / n, st / n))
}

pub fn re(pred: &Volume3D, truth: &Volume3D, roi: &RoiMask) -> Result<f64> {
    let (mp, mt) = roi_means(pred, truth, roi)?;
    Ok((mt - mp).abs())
}

pub fn rpe(pred: &Volume3D, truth: &Volume3D, roi: &RoiMask) -> Result<f64> {
    let (mp, mt) = roi_means(pred, truth, roi)?;
    if mt == 0.0 {
        return Err(Error::param("RPE undefined: zero mean ground truth"));
    }
    Ok(100.0 * (mt - mp).abs() / mt.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub mae_ms: f64,
    pub mape_pct: f64,
    pub re_ms: f64,
    pub rpe_pct: f64,
}

pub fn evaluate(pred: &Volume3D, truth: &Volume3D, roi: &RoiMask) -> Result<SubjectMetrics> {
    Ok(SubjectMetrics {
        mae_ms: mae(pred, truth, roi)?,
        mape_pct: mape(pred, truth, roi)?,
        re_ms: re(pred, truth, roi)?,
        rpe_pct: rpe(pred, truth, roi)?,
    })
}

/// Subject-to-fold assignment shared by every experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub n_folds: usize,
    /// `(subject_id, fold)` in the order the subjects were given.
    pub assignments: Vec<(String, usize)>,
}

/// Shuffles subjects with `seed` and deals them round-robin into five folds.
pub fn make_folds(subject_ids: &[String], seed: u64) -> Result<FoldPlan> {
    if subject_ids.len() < N_FOLDS {
        return Err(Error::TooFewSubjects {
            needed: N_FOLDS,
            got: subject_ids.len(),
        });
    }
    let mut order: Vec<usize> = (0..subject_ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; subject_ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % N_FOLDS;
    }
    Ok(FoldPlan {
        seed,
        n_folds: N_FOLDS,
        assignments: subject_ids.iter().cloned().zip(fold).collect(),
    })
}

impl FoldPlan {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.assignments.iter().find(|(s, _)| s == subject_id).map(|&(_, f)| f)
    }

    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments.iter().filter(|(_, f)| *f == fold).map(|(s, _)| s.as_str()).collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments.iter().filter(|(_, f)| *f != fold).map(|(s, _)| s.as_str()).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        (0..self.n_folds).map(|f| self.test_ids(f).len()).collect()
    }

    /// Every subject in exactly one test fold and never in its own training set.
    pub fn check_hygiene(&self) -> Result<()> {
        for f in 0..self.n_folds {
            let train = self.train_ids(f);
            if let Some(s) = self.test_ids(f).iter().find(|s| train.contains(s)) {
                return Err(Error::param(format!("subject {s} appears in train and test of fold {f}")));
            }
        }
        let mut ids: Vec<&String> = self.assignments.iter().map(|(s, _)| s).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.assignments.len() {
            return Err(Error::param("duplicate subject in fold plan"));
        }
        Ok(())
    }
}

/// One row of a metrics report: a subject evaluated for one input combination and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub subject_id: String,
    pub fold: usize,
    pub combo_id: String,
    pub model_id: String,
    pub mae_ms: f64,
    pub mape_pct: f64,
    pub re_ms: f64,
    pub rpe_pct: f64,
}

impl ReportRow {
    pub fn new(subject_id: &str, fold: usize, combo_id: &str, model_id: &str, m: SubjectMetrics) -> Self {
        Self {
            subject_id: subject_id.into(),
            fold,
            combo_id: combo_id.into(),
            model_id: model_id.into(),
            mae_ms: m.mae_ms,
            mape_pct: m.mape_pct,
            re_ms: m.re_ms,
            rpe_pct: m.rpe_pct,
        }
    }

    pub fn metrics(&self) -> SubjectMetrics {
        SubjectMetrics {
            mae_ms: self.mae_ms,
            mape_pct: self.mape_pct,
            re_ms: self.re_ms,
            rpe_pct: self.rpe_pct,
        }
    }
}

/// Mean and sample standard deviation; `std` is `None` for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub combo_id: String,
    pub model_id: String,
    pub mae_ms: MeanStd,
    pub mape_pct: MeanStd,
    pub re_ms: MeanStd,
    pub rpe_pct: MeanStd,
}

impl SummaryRow {
    pub fn meets_rpe_target(&self) -> bool {
        self.rpe_pct.mean < RPE_TARGET_PCT
    }
}

/// Groups rows by `(combo_id, model_id)`, sorted by key.
pub fn aggregate(rows: &[ReportRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::NothingToReport);
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.combo_id, &r.model_id)).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((combo, model), g)| {
            let stat = |f: fn(&ReportRow) -> f64| MeanStd::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap();
            SummaryRow {
                combo_id: combo.into(),
                model_id: model.into(),
                mae_ms: stat(|r| r.mae_ms),
                mape_pct: stat(|r| r.mape_pct),
                re_ms: stat(|r| r.re_ms),
                rpe_pct: stat(|r| r.rpe_pct),
            }
        })
        .collect())
}
