//! Task and reconstruction losses with analytic gradients.

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

/// Clamp bound keeping probabilities away from 0 and 1 in `bce`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean negative log softmax over the batch. Returns the loss and its
/// gradient w.r.t. the logits. Softmax is computed with per-row max
/// subtraction so large logits stay finite.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (batch, classes) = (logits.rows(), logits.cols());
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::domain(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(batch, classes);
    for r in 0..batch {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[labels[r]];
        for c in 0..classes {
            let p = (row[c] - max).exp() / sum_exp;
            let onehot = if c == labels[r] { 1.0 } else { 0.0 };
            grad.set(r, c, (p - onehot) / batch as f64);
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Mean binary cross-entropy over all entries of `probs` against `targets`
/// in {0,1}. Probabilities are clamped to `[PROB_CLAMP, 1-PROB_CLAMP]`.
pub fn bce(probs: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    probs.same_shape(targets)?;
    let count = (probs.rows() * probs.cols()) as f64;
    let mut loss = 0.0;
    let grad = probs.zip_map(targets, |p, y| {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        (p - y) / (p * (1.0 - p)) / count
    })?;
    Ok((loss / count, grad))
}

/// Mean squared element difference; gradient is `2 (pred - target) / count`.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    pred.same_shape(target)?;
    let count = (pred.rows() * pred.cols()) as f64;
    let mut loss = 0.0;
    let grad = pred.zip_map(target, |p, t| {
        let d = p - t;
        loss += d * d;
        2.0 * d / count
    })?;
    Ok((loss / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let logits = Matrix::from_rows(&[vec![10.0, 0.0]]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
        // ln(1 + e^-10)
        let expected = (1.0 + (-10.0_f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 4.54e-5).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_grad_rows_sum_to_zero() {
        let logits = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 3.0, -1.0]]).unwrap();
        let (_, grad) = cross_entropy(&logits, &[2, 0]).unwrap();
        for r in 0..2 {
            let s: f64 = grad.row(r).iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(cross_entropy(&logits, &[2]).is_err());
    }

    #[test]
    fn bce_cases() {
        let half = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (loss, _) = bce(&half, &one).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-12);

        let near_one = Matrix::from_rows(&[vec![1.0 - 1e-7]]).unwrap();
        let (loss, _) = bce(&near_one, &one).unwrap();
        assert!(loss < 1e-6);

        let p = Matrix::from_rows(&[vec![0.8]]).unwrap();
        let zero = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let (loss, _) = bce(&p, &zero).unwrap();
        assert!((loss - (-0.2_f64.ln())).abs() < 1e-12);
        assert!((loss - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn bce_clamps_extreme_probabilities() {
        let p = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (loss, grad) = bce(&p, &y).unwrap();
        assert!(loss.is_finite());
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn mse_cases() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(mse(&a, &a).unwrap().0, 0.0);
        assert_eq!(mse(&a, &b).unwrap().0, 1.0);
        let p = Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(mse(&p, &t).unwrap().0, 2.5);
        assert!(mse(&a, &Matrix::zeros(2, 1)).is_err());
    }
}
