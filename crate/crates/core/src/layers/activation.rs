use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Row-wise softmax over `[N, K]`, stabilized by subtracting the row max.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_rank("softmax", 2)?;
    let k = logits.shape()[1];
    if k < 2 {
        return Err(Error::dim("softmax", "1 (classes)", ">= 2", k));
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(logits.shape(), out)
}

/// Rectifier; the subgradient at exactly zero is zero.
#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    mask: Option<Vec<bool>>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    pub fn forward(&mut self, x: &Tensor<T>, keep: bool) -> Tensor<T> {
        self.mask = keep.then(|| x.data().iter().map(|&v| v > T::zero()).collect());
        relu(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::InvalidArgument("relu: backward without forward".into()))?;
        let data = grad_out
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect();
        Tensor::new(grad_out.shape(), data)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    output: Option<Vec<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn forward(&mut self, x: &Tensor<T>, keep: bool) -> Tensor<T> {
        let y = sigmoid(x);
        self.output = keep.then(|| y.data().to_vec());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .output
            .take()
            .ok_or_else(|| Error::InvalidArgument("sigmoid: backward without forward".into()))?;
        let data = grad_out
            .data()
            .iter()
            .zip(&y)
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect();
        Tensor::new(grad_out.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = Tensor::new(&[3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        let mut r = Relu::default();
        r.forward(&x, true);
        let g = r.backward(&Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&Tensor::<f64>::zeros(&[1, 7])).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        for c in [-50.0f64, 0.0, 3.7, 1e3] {
            let p = softmax(&Tensor::new(&[1, 2], vec![c, c + 2f64.ln()]).unwrap()).unwrap();
            assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-9);
            assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_direct_values() {
        let p = softmax(&Tensor::new(&[1, 3], vec![1.0f32, 2.0, 3.0]).unwrap()).unwrap();
        // e^k / (e + e^2 + e^3)
        let expected = [0.09003, 0.24473, 0.66524];
        for (a, b) in p.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_needs_two_classes() {
        assert!(softmax(&Tensor::<f32>::zeros(&[2, 1])).is_err());
    }
}
