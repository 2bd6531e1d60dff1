//! Central finite-difference check of [`Network::backward`].
//!
//! The scalar under test is `sum(r * forward(x))` for a fixed pseudo-random
//! projection `r`, which is smooth wherever the network itself is.

use crate::{Mode, Network, Result, Tensor};

pub const STEP: f64 = 1e-5;
/// Denominator floor for the relative error, per unit of objective
/// magnitude. Rounding in the difference quotient is about
/// `f64::EPSILON * |f| / STEP`, so gradients that are zero up to rounding
/// (a conv bias feeding batch norm, say) would otherwise fail spuriously.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Where the worst disagreement was, e.g. `"layer 2 param 0 [5]"`.
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn projection(len: usize) -> Vec<f64> {
    (0..len).map(|i| ((i as f64 + 1.0) * 0.618_034).fract() * 2.0 - 1.0).collect()
}

fn objective(net: &Network, x: &Tensor, r: &[f64]) -> Result<f64> {
    let mut n = net.clone();
    let y = n.forward(x, Mode::Train)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Checks every parameter and every input element.
pub fn check_network(net: &Network, x: &Tensor) -> Result<GradCheckReport> {
    let mut work = net.clone();
    let y = work.forward(x, Mode::Train)?;
    let r = projection(y.len());
    let f0: f64 = y.data().iter().zip(&r).map(|(a, b)| a * b).sum();
    let floor = REL_FLOOR * f0.abs().max(1.0);
    let gin = work.backward(&Tensor::from_vec(y.shape(), r.clone())?)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |err: f64, at: String| {
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = report.max_rel_err.max(err);
            if err >= report.max_rel_err {
                report.worst = at;
            }
        }
    };

    for li in 0..net.layers().len() {
        for pi in 0..net.layers()[li].params.len() {
            for k in 0..net.layers()[li].params[pi].value.len() {
                let mut plus = net.clone();
                plus.layers_mut()[li].params[pi].value[k] += STEP;
                let mut minus = net.clone();
                minus.layers_mut()[li].params[pi].value[k] -= STEP;
                let numeric = (objective(&plus, x, &r)? - objective(&minus, x, &r)?) / (2.0 * STEP);
                let analytic = work.layers()[li].params[pi].grad[k];
                record(relative_error(analytic, numeric, floor), format!("layer {li} param {pi} [{k}]"));
            }
        }
    }
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[k] -= STEP;
        let numeric = (objective(net, &xp, &r)? - objective(net, &xm, &r)?) / (2.0 * STEP);
        record(relative_error(gin.data()[k], numeric, floor), format!("input [{k}]"));
    }
    Ok(report)
}
