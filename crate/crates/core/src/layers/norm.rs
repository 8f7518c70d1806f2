//! Per-channel batch normalization over the last axis.

use super::Mode;
use crate::error::{Error, Result};
use crate::layers::conv::accumulate;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub name: String,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    /// Identity affine, moving statistics at mean 0 / variance 1.
    pub fn new(name: impl Into<String>, channels: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            name: name.into(),
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            moving_mean: Tensor::zeros(&[channels]),
            moving_var: Tensor::full(&[channels], T::one()),
            momentum: T::from_f64_lossy(momentum),
            epsilon: T::from_f64_lossy(epsilon),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, keep: bool) -> Result<Tensor<T>> {
        let c = self.channels();
        let last = *x.shape().last().unwrap_or(&0);
        if last != c {
            return Err(Error::dim("batchnorm", format!("{} (channels)", x.shape().len() - 1), c, last));
        }
        let rows = x.len() / c;
        let (mean, var) = match mode {
            Mode::Train => {
                let count = T::from_usize(rows).unwrap();
                let mut mean = vec![T::zero(); c];
                for row in x.data().chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![T::zero(); c];
                for row in x.data().chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= count);
                let keep_frac = self.momentum;
                let new_frac = T::one() - self.momentum;
                for (mm, &m) in self.moving_mean.data_mut().iter_mut().zip(&mean) {
                    *mm = keep_frac * *mm + new_frac * m;
                }
                for (mv, &v) in self.moving_var.data_mut().iter_mut().zip(&var) {
                    *mv = keep_frac * *mv + new_frac * v;
                }
                (mean, var)
            }
            Mode::Infer => (self.moving_mean.data().to_vec(), self.moving_var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();

        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ((src, xh), dst) in x
            .data()
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for ch in 0..c {
                let h = (src[ch] - mean[ch]) * inv_std[ch];
                xh[ch] = h;
                dst[ch] = self.gamma.data()[ch] * h + self.beta.data()[ch];
            }
        }
        self.cache = keep.then_some(Cache { xhat, inv_std, mode });
        Tensor::new(x.shape(), out)
    }

    /// Inference-mode normalization with the moving statistics; caches nothing.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.channels();
        let last = *x.shape().last().unwrap_or(&0);
        if last != c {
            return Err(Error::dim("batchnorm", format!("{} (channels)", x.shape().len() - 1), c, last));
        }
        let mut scale = vec![T::zero(); c];
        let mut shift = vec![T::zero(); c];
        for ch in 0..c {
            let inv_std = T::one() / (self.moving_var.data()[ch] + self.epsilon).sqrt();
            scale[ch] = self.gamma.data()[ch] * inv_std;
            shift[ch] = self.beta.data()[ch] - self.moving_mean.data()[ch] * scale[ch];
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = row[ch] * scale[ch] + shift[ch];
            }
        }
        Tensor::new(x.shape(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument(format!("{}: backward without forward", self.name)))?;
        let c = self.channels();
        let rows = grad_out.len() / c;
        let dy = grad_out.data();

        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (g, h) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                dgamma[ch] += g[ch] * h[ch];
                dbeta[ch] += g[ch];
            }
        }

        let gamma = self.gamma.data();
        let mut dx = vec![T::zero(); dy.len()];
        match cache.mode {
            Mode::Infer => {
                for (d, g) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                    for ch in 0..c {
                        d[ch] = g[ch] * gamma[ch] * cache.inv_std[ch];
                    }
                }
            }
            Mode::Train => {
                // dx = gamma * inv_std / M * (M*dy - sum(dy) - xhat * sum(dy*xhat))
                let m = T::from_usize(rows).unwrap();
                for ((d, g), h) in dx
                    .chunks_exact_mut(c)
                    .zip(dy.chunks_exact(c))
                    .zip(cache.xhat.chunks_exact(c))
                {
                    for ch in 0..c {
                        let scale = gamma[ch] * cache.inv_std[ch] / m;
                        d[ch] = scale * (m * g[ch] - dbeta[ch] - h[ch] * dgamma[ch]);
                    }
                }
            }
        }

        accumulate(&mut self.gamma, &Tensor::new(&[c], dgamma)?);
        accumulate(&mut self.beta, &Tensor::new(&[c], dbeta)?);
        Tensor::new(grad_out.shape(), dx)
    }
}

/// Functional batch normalization over `[N,H,W,C]`; updates the moving
/// statistics in place when `mode` is [`Mode::Train`].
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    moving_mean: &mut Tensor<T>,
    moving_var: &mut Tensor<T>,
    mode: Mode,
    momentum: f64,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let mut layer = BatchNorm::new("batchnorm", gamma.len(), momentum, epsilon);
    for (name, t) in [("beta", beta), ("moving_mean", &*moving_mean), ("moving_var", &*moving_var)] {
        if t.len() != gamma.len() {
            return Err(Error::dim("batchnorm", name, gamma.len(), t.len()));
        }
    }
    layer.gamma = gamma.clone();
    layer.beta = beta.clone();
    layer.moving_mean = moving_mean.clone();
    layer.moving_var = moving_var.clone();
    let out = layer.forward(input, mode, false)?;
    *moving_mean = layer.moving_mean;
    *moving_var = layer.moving_var;
    Ok(out)
}
