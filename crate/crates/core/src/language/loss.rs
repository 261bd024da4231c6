use crate::error::ModelError;
use crate::nn::Matrix;

/// Cross-entropy summed over positions where `mask` is true, with the number
/// of such positions and the gradient of the sum with respect to `logits`.
pub fn cross_entropy_sum(
    logits: &Matrix,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f64, usize, Matrix), ModelError> {
    if logits.nrows() != targets.len() || mask.len() != targets.len() {
        return Err(ModelError::LossShape {
            logits: logits.nrows(),
            targets: targets.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0;
    let mut grad = Matrix::zeros(logits.raw_dim());
    for (t, (&target, &on)) in targets.iter().zip(mask).enumerate() {
        if !on {
            continue;
        }
        let row = logits.row(t);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[target];
        count += 1;
        let mut g = grad.row_mut(t);
        for (gv, &v) in g.iter_mut().zip(row.iter()) {
            *gv = (v - log_z).exp();
        }
        g[target] -= 1.0;
    }
    if count == 0 {
        return Err(ModelError::EmptyMask);
    }
    Ok((total, count, grad))
}

/// Mean cross-entropy over the masked-in positions.
pub fn masked_loss(logits: &Matrix, targets: &[usize], mask: &[bool]) -> Result<f64, ModelError> {
    let (sum, count, _) = cross_entropy_sum(logits, targets, mask)?;
    Ok(sum / count as f64)
}
