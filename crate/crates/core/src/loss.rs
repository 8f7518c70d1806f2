//! Landmark regression (mean absolute error) and classification
//! (categorical cross-entropy) losses.

use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean of `|pred - target|` over every coordinate of every sample.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    Ok(l1_loss_with_grad(pred, target)?.0)
}

/// L1 loss and its gradient with respect to `pred`; the subgradient at a
/// zero residual is zero.
pub fn l1_loss_with_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    target.expect_shape("l1_loss", pred.shape())?;
    let count = T::from_usize(pred.len()).unwrap();
    let mut total = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let r = p - t;
            total += r.abs();
            if r > T::zero() {
                T::one() / count
            } else if r < T::zero() {
                -T::one() / count
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((total / count, Tensor::new(pred.shape(), grad)?))
}

fn check_labels(op: &'static str, labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::dim(op, "0 (batch)", rows, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Index {
            op,
            index: bad,
            len: classes,
        });
    }
    Ok(())
}

/// Mean over rows of `-ln(probs[row, label])` for probability rows.
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    probs.expect_rank("cross_entropy_loss", 2)?;
    let (n, c) = (probs.shape()[0], probs.shape()[1]);
    check_labels("cross_entropy_loss", labels, n, c)?;
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.data()[i * c + l].max(T::min_positive_value()).ln())
        .sum();
    Ok(total / T::from_usize(n).unwrap())
}

/// Cross-entropy of `softmax(logits)`, with the fused gradient
/// `(softmax - onehot) / N` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let probs = softmax(logits)?;
    let (n, c) = (probs.shape()[0], probs.shape()[1]);
    check_labels("softmax_cross_entropy", labels, n, c)?;
    let loss = cross_entropy_loss(&probs, labels)?;
    let scale = T::one() / T::from_usize(n).unwrap();
    let mut grad = probs.into_data();
    for (i, &l) in labels.iter().enumerate() {
        grad[i * c + l] -= T::one();
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss, Tensor::new(&[n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let target = t(&[2, 2], &[0.1, 0.5, 0.9, 0.3]);
        assert_eq!(l1_loss(&target, &target).unwrap(), 0.0);
        let shifted = target.map(|v| v + 0.1);
        assert!((l1_loss(&shifted, &target).unwrap() - 0.1).abs() < 1e-12);
        let loss = l1_loss(&t(&[1, 2], &[0.2, 0.8]), &t(&[1, 2], &[0.5, 0.4])).unwrap();
        assert!((loss - 0.35).abs() < 1e-12);
    }

    #[test]
    fn l1_zero_residual_has_zero_subgradient() {
        let (_, g) = l1_loss_with_grad(&t(&[1, 2], &[0.5, 0.7]), &t(&[1, 2], &[0.5, 0.2])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.5]);
    }

    #[test]
    fn l1_shape_mismatch() {
        assert!(l1_loss(&t(&[1, 2], &[0.0, 0.0]), &t(&[2, 1], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy_loss(&t(&[1, 2], &[1.0, 0.0]), &[0]).unwrap(), 0.0);
        let uniform = Tensor::full(&[3, 7], 1.0 / 7.0);
        assert!((cross_entropy_loss(&uniform, &[0, 3, 6]).unwrap() - 7f64.ln()).abs() < 1e-12);
        let p = t(&[1, 3], &[0.5, 0.25, 0.25]);
        assert!((cross_entropy_loss(&p, &[1]).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let err = cross_entropy_loss(&t(&[1, 2], &[0.5, 0.5]), &[2]).unwrap_err();
        assert!(matches!(err, Error::Index { index: 2, len: 2, .. }));
    }

    #[test]
    fn fused_gradient_is_probs_minus_onehot() {
        let logits = t(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let (loss, g) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        let p = softmax(&logits).unwrap();
        let expected_loss = (-p.data()[2].ln() - p.data()[3].ln()) / 2.0;
        assert!((loss - expected_loss).abs() < 1e-12);
        assert!((g.data()[2] - (p.data()[2] - 1.0) / 2.0).abs() < 1e-12);
        assert!((g.data()[4] - p.data()[4] / 2.0).abs() < 1e-12);
    }
}
