use ndarray::Array2;

use crate::error::{Error, Result};

/// Mean absolute error over the unmasked entries, with its gradient with
/// respect to `pred`. The subgradient at a zero residual is 0.
pub fn mae_loss(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(
            "loss target entries",
            pred.len(),
            target.len(),
        ));
    }
    if let Some(m) = mask {
        if m.dim() != pred.dim() {
            return Err(Error::shape("loss mask entries", pred.len(), m.len()));
        }
    }
    let active = |idx: (usize, usize)| mask.map_or(true, |m| m[idx]);
    let count = pred.indexed_iter().filter(|(i, _)| active(*i)).count();
    if count == 0 {
        return Err(Error::input("loss over an empty (fully masked) batch"));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    for (idx, &p) in pred.indexed_iter() {
        if !active(idx) {
            continue;
        }
        let r = p - target[idx];
        total += r.abs();
        grad[idx] = if r > 0.0 {
            scale
        } else if r < 0.0 {
            -scale
        } else {
            0.0
        };
    }
    Ok((total * scale, grad))
}
