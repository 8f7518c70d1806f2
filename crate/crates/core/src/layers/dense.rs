use crate::error::{Error, Result};
use crate::layers::conv::accumulate;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `[N, D] · [D, K] + [K] -> [N, K]`
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank("dense", 2)?;
    w.expect_rank("dense", 2)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if w.shape()[0] != d {
        return Err(Error::dim("dense", "weights 0 (input features)", d, w.shape()[0]));
    }
    let k = w.shape()[1];
    if b.shape() != [k] {
        return Err(Error::dim("dense", "bias 0 (outputs)", k, format!("{:?}", b.shape())));
    }
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    T::gemm(n, d, k, T::one(), x.data(), (d as isize, 1), w.data(), (k as isize, 1), T::one(), &mut out, (k as isize, 1));
    Tensor::new(&[n, k], out)
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: impl Into<String>, weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            weight,
            bias,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor<T>, keep: bool) -> Result<Tensor<T>> {
        let y = dense(x, &self.weight, &self.bias)?;
        self.cache = keep.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument(format!("{}: backward without forward", self.name)))?;
        let (n, d, k) = (x.shape()[0], self.inputs(), self.outputs());
        grad_out.expect_shape("dense backward", &[n, k])?;
        let dy = grad_out.data();

        let mut dw = vec![T::zero(); d * k];
        T::gemm(d, n, k, T::one(), x.data(), (1, d as isize), dy, (k as isize, 1), T::zero(), &mut dw, (k as isize, 1));
        let mut db = vec![T::zero(); k];
        for row in dy.chunks_exact(k) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![T::zero(); n * d];
        T::gemm(n, k, d, T::one(), dy, (k as isize, 1), self.weight.data(), (1, k as isize), T::zero(), &mut dx, (d as isize, 1));

        accumulate(&mut self.weight, &Tensor::new(&[d, k], dw)?);
        accumulate(&mut self.bias, &Tensor::new(&[k], db)?);
        Tensor::new(&[n, d], dx)
    }
}
