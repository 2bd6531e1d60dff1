//! Mean absolute error, optionally restricted to a binary mask.

use crate::{NnError, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct L1Loss {
    pub value: f64,
    /// d value / d pred; the subgradient at `pred == target` is 0.
    pub grad: Tensor,
    pub count: usize,
}

pub fn l1_loss(pred: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<L1Loss> {
    if pred.shape() != target.shape() {
        return Err(NnError::shape(0, format!("loss: pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if let Some(m) = mask {
        if m.shape() != pred.shape() {
            return Err(NnError::shape(0, format!("loss: mask {:?} vs pred {:?}", m.shape(), pred.shape())));
        }
        if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(NnError::InvalidSpec("loss mask must be binary".into()));
        }
    }
    let on = |i: usize| mask.is_none_or(|m| m.data()[i] == 1.0);
    let count = (0..pred.len()).filter(|&i| on(i)).count();
    if count == 0 {
        return Err(NnError::EmptyMask);
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        if on(i) {
            let d = pred.data()[i] - target.data()[i];
            sum += d.abs();
            *g = if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            };
        }
    }
    Ok(L1Loss {
        value: sum * inv,
        grad: Tensor::from_vec(pred.shape(), grad)?,
        count,
    })
}
