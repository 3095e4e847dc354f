use crate::error::{Error, Result};
use crate::numerics::ops::{log_softmax_rows, sigmoid_scalar, softmax_rows};
use crate::numerics::Tensor;

/// Mean softmax cross-entropy over rows, and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    logits.expect_same_shape(targets, "softmax_cross_entropy")?;
    for (i, row) in targets.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
            return Err(Error::validation(format!(
                "target row {i} is not a probability distribution"
            )));
        }
    }
    let n = logits.rows() as f64;
    let log_p = log_softmax_rows(logits);
    let loss = -log_p
        .data()
        .iter()
        .zip(targets.data())
        .map(|(lp, t)| if *t == 0.0 { 0.0 } else { t * lp })
        .sum::<f64>()
        / n;
    let grad = softmax_rows(logits).zip_map(targets, "softmax_cross_entropy", |p, t| (p - t) / n)?;
    Ok((loss, grad))
}

/// Mean sigmoid cross-entropy for single-logit binary targets in `{0, 1}`.
pub fn sigmoid_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    logits.expect_same_shape(targets, "sigmoid_cross_entropy")?;
    let n = logits.rows() as f64 * logits.cols() as f64;
    let loss = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / n;
    let grad = logits.zip_map(targets, "sigmoid_cross_entropy", |z, t| {
        (sigmoid_scalar(z) - t) / n
    })?;
    Ok((loss, grad))
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mean_squared_error(predictions: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    let diff = predictions.sub(targets)?;
    let n = diff.len() as f64;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}
