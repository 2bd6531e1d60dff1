//! The three experiments, each a set of report rows plus comparisons.
//!
//! Paper-expected directions are recorded as flags (logged at WARN when they
//! do not hold) rather than enforced.

use rhomap_core::metrics::{aggregate, evaluate, MeanStd, ReportRow, SummaryRow, RPE_TARGET_PCT};
use rhomap_dl::data::encode_inputs;
use rhomap_nn::{l1_loss, Tensor};
use serde::Serialize;

use crate::config::ModelKind;
use crate::runner::Runner;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub combo_id: String,
    pub left_model: String,
    pub left_rpe_pct: f64,
    pub right_model: String,
    pub right_rpe_pct: f64,
    /// Expected relation, if any, e.g. `"unet_unmasked <= mlp"`.
    pub expectation: String,
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestModel {
    pub combo_id: String,
    pub model_id: String,
    pub rpe_mean_pct: f64,
    pub rpe_std_pct: Option<f64>,
    pub nlls_rpe_mean_pct: f64,
    pub meets_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub rows: Vec<ReportRow>,
    pub comparisons: Vec<Comparison>,
    pub best: Vec<BestModel>,
    pub checks: Vec<Check>,
    /// Ground truth (four-point fit) scored against the analytic phantom map.
    pub oracle_rows: Vec<ReportRow>,
}

impl ExperimentReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        Ok(aggregate(&self.rows)?)
    }

    pub fn rpe(&self, combo_id: &str, model_id: &str) -> Option<MeanStd> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.combo_id == combo_id && r.model_id == model_id)
            .map(|r| r.rpe_pct)
            .collect();
        MeanStd::of(&vals)
    }

    /// Flags whose expectation did not hold.
    pub fn failed_flags(&self) -> impl Iterator<Item = &Comparison> {
        self.comparisons.iter().filter(|c| c.holds == Some(false))
    }

    fn warn_flags(&self) {
        for c in self.failed_flags() {
            log::warn!(
                "{} {}: expected {} but {}={:.3}% and {}={:.3}%",
                self.name,
                c.combo_id,
                c.expectation,
                c.left_model,
                c.left_rpe_pct,
                c.right_model,
                c.right_rpe_pct
            );
        }
    }
}

fn mean_rpe(report: &ExperimentReport, combo: &str, model: ModelKind) -> f64 {
    report.rpe(combo, model.id()).map_or(f64::NAN, |m| m.mean)
}

fn compare(
    report: &ExperimentReport,
    combo: &str,
    left: ModelKind,
    right: ModelKind,
    expect_left_le_right: Option<bool>,
) -> Comparison {
    let (l, r) = (mean_rpe(report, combo, left), mean_rpe(report, combo, right));
    let (expectation, holds) = match expect_left_le_right {
        Some(true) => (format!("{} <= {}", left.id(), right.id()), Some(l <= r)),
        Some(false) => (format!("{} <= {}", right.id(), left.id()), Some(r <= l)),
        None => (String::new(), None),
    };
    Comparison {
        combo_id: combo.into(),
        left_model: left.id().into(),
        left_rpe_pct: l,
        right_model: right.id().into(),
        right_rpe_pct: r,
        expectation,
        holds,
    }
}

/// Two-point NLLS and the learned candidates on every combo; the best
/// learned model per combo is the one with the lowest mean RPE.
pub fn run_experiment1(runner: &mut Runner) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("exp1");
    let combos = runner.cfg.combos.clone();
    let candidates = runner.cfg.exp1_candidates.clone();
    for (ci, _combo) in combos.iter().enumerate() {
        rep.rows.extend(runner.rows(ci, ModelKind::Nlls2pt)?);
        for &m in &candidates {
            rep.rows.extend(runner.rows(ci, m)?);
        }
    }
    for combo in &combos {
        let nlls = mean_rpe(&rep, &combo.id, ModelKind::Nlls2pt);
        let (best, stat) = candidates
            .iter()
            .map(|&m| (m, rep.rpe(&combo.id, m.id()).expect("rows exist for every candidate")))
            .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .expect("at least one candidate");
        rep.best.push(BestModel {
            combo_id: combo.id.clone(),
            model_id: best.id().into(),
            rpe_mean_pct: stat.mean,
            rpe_std_pct: stat.std,
            nlls_rpe_mean_pct: nlls,
            meets_target: stat.mean < RPE_TARGET_PCT,
        });
        rep.comparisons.push(compare(&rep, &combo.id, best, ModelKind::Nlls2pt, Some(true)));
    }
    // classical degradation across the standard combos, as in the paper
    let order = ["pd-10", "pd-50", "t0-10", "t0-50"];
    if order.iter().all(|id| combos.iter().any(|c| c.id == *id)) {
        let r: Vec<f64> = order.iter().map(|id| mean_rpe(&rep, id, ModelKind::Nlls2pt)).collect();
        rep.checks.push(Check {
            name: "nlls_2pt RPE ordering pd-10 > pd-50 > t0-10 > t0-50".into(),
            passed: r.windows(2).all(|w| w[0] > w[1]),
        });
    }
    for s in &runner.cohort.subjects {
        let m = evaluate(&s.ground_truth.t1rho_map, &s.bundle.truth_t1rho, &s.bundle.roi)?;
        let fold = runner.folds.fold_of(s.id()).expect("every subject has a fold");
        rep.oracle_rows.push(ReportRow::new(s.id(), fold, "tsl-all", "nlls_4pt_vs_truth", m));
    }
    rep.warn_flags();
    Ok(rep)
}

/// Unmasked U-Net against the MLP on every combo.
pub fn run_experiment2(runner: &mut Runner) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("exp2");
    let combos = runner.cfg.combos.clone();
    for ci in 0..combos.len() {
        rep.rows.extend(runner.rows(ci, ModelKind::UnetUnmasked)?);
        rep.rows.extend(runner.rows(ci, ModelKind::Mlp)?);
    }
    for combo in &combos {
        let expect = match combo.id.as_str() {
            "t0-50" => Some(false),
            "pd-10" => Some(true),
            _ => None,
        };
        rep.comparisons
            .push(compare(&rep, &combo.id, ModelKind::UnetUnmasked, ModelKind::Mlp, expect));
    }
    rep.warn_flags();
    Ok(rep)
}

/// Masked against unmasked U-Net, with pipeline checks on the masked arm.
pub fn run_experiment3(runner: &mut Runner) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("exp3");
    let combos = runner.cfg.combos.clone();

    let mut inputs_zero = true;
    let mut grads_zero = true;
    for combo in &combos {
        for s in &runner.cohort.subjects {
            let (i0, ik) = s.combo_inputs(combo);
            let roi = &s.bundle.roi;
            let (a, b) = encode_inputs(i0, ik, roi, true)?;
            inputs_zero &= (0..roi.len()).all(|i| roi.contains(i) || (a.data()[i] == 0.0 && b.data()[i] == 0.0));

            let n = roi.len();
            let pred = Tensor::from_rows(n, 1, a.data().to_vec())?;
            let target = Tensor::from_rows(n, 1, s.ground_truth.t1rho_map.data().to_vec())?;
            let mask = Tensor::from_rows(n, 1, roi.labels().iter().map(|&l| f64::from(l)).collect())?;
            let loss = l1_loss(&pred, &target, Some(&mask))?;
            grads_zero &= (0..n).all(|i| roi.contains(i) || loss.grad.data()[i] == 0.0);
        }
    }
    rep.checks.push(Check {
        name: "masked arm: non-ROI input voxels exactly 0".into(),
        passed: inputs_zero,
    });
    rep.checks.push(Check {
        name: "masked arm: loss gradient exactly 0 outside ROI".into(),
        passed: grads_zero,
    });

    for ci in 0..combos.len() {
        rep.rows.extend(runner.rows(ci, ModelKind::UnetUnmasked)?);
        rep.rows.extend(runner.rows(ci, ModelKind::UnetMasked)?);
    }
    for combo in &combos {
        rep.comparisons.push(compare(
            &rep,
            &combo.id,
            ModelKind::UnetUnmasked,
            ModelKind::UnetMasked,
            Some(true),
        ));
    }
    rep.warn_flags();
    Ok(rep)
}
