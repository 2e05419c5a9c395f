//! Mean squared error and binary cross-entropy with their gradients.

use ndarray::{Array, Dimension, Zip};

use super::{lit, shape_err, Result, Scalar};

pub const BCE_CLIP: f64 = 1e-7;

fn same_shape<T, D: Dimension>(pred: &Array<T, D>, target: &Array<T, D>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(shape_err("loss operands", target.shape(), pred.shape()));
    }
    Ok(())
}

/// Mean of squared differences; `0` for empty operands.
pub fn mse<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: &Array<T, D>) -> Result<T> {
    same_shape(pred, target)?;
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let mut sum = T::zero();
    Zip::from(pred).and(target).for_each(|&p, &t| sum += (p - t) * (p - t));
    Ok(sum / lit(pred.len() as f64))
}

pub fn mse_grad<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: &Array<T, D>) -> Array<T, D> {
    let k: T = lit(2.0 / pred.len().max(1) as f64);
    Zip::from(pred).and(target).map_collect(|&p, &t| k * (p - t))
}

/// `-mean[y ln p + (1 - y) ln(1 - p)]` with `p` clipped to `[1e-7, 1 - 1e-7]`.
pub fn bce<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: &Array<T, D>) -> Result<T> {
    same_shape(pred, target)?;
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let lo: T = lit(BCE_CLIP);
    let hi: T = lit(1.0 - BCE_CLIP);
    let mut sum = T::zero();
    Zip::from(pred).and(target).for_each(|&p, &y| {
        let p = p.max(lo).min(hi);
        sum += y * p.ln() + (T::one() - y) * (T::one() - p).ln();
    });
    Ok(-sum / lit(pred.len() as f64))
}

/// Cross-entropy of `sigmoid(logits)`; returns the loss and the gradient with
/// respect to the logits, `(sigmoid(z) - y) / n`.
pub fn bce_with_logits<T: Scalar, D: Dimension>(
    logits: &Array<T, D>,
    target: &Array<T, D>,
) -> Result<(T, Array<T, D>)> {
    same_shape(logits, target)?;
    let probs = logits.mapv(super::layers::sigmoid);
    let loss = bce(&probs, target)?;
    let n: T = lit(logits.len().max(1) as f64);
    let grad = Zip::from(&probs).and(target).map_collect(|&p, &y| (p - y) / n);
    Ok((loss, grad))
}
