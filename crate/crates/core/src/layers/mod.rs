//! Layers with explicit forward/backward passes and a sequential stack.
//!
//! Each layer caches what its backward pass needs during a forward call
//! made with `keep = true`; `backward` consumes that cache and
//! accumulates parameter gradients into the parameters' gradient slots.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod norm;
pub mod pool;

pub use activation::{relu, sigmoid, softmax, Relu, Sigmoid};
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvGrads};
pub use dense::{dense, Dense};
pub use norm::{batchnorm, BatchNorm};
pub use pool::{global_avg_pool, maxpool2d, GlobalAvgPool, MaxPool2d};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu<T>),
    Sigmoid(Sigmoid<T>),
    MaxPool(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    Dense(Dense<T>),
}

/// A parameter or buffer tensor together with its qualified name.
pub struct Named<'a, T> {
    pub name: String,
    pub tensor: &'a Tensor<T>,
    pub trainable: bool,
}

pub struct NamedMut<'a, T> {
    pub name: String,
    pub tensor: &'a mut Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, keep: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x, keep),
            Layer::BatchNorm(l) => l.forward(x, mode, keep),
            Layer::Relu(l) => Ok(l.forward(x, keep)),
            Layer::Sigmoid(l) => Ok(l.forward(x, keep)),
            Layer::MaxPool(l) => l.forward(x, keep),
            Layer::GlobalAvgPool(l) => l.forward(x, keep),
            Layer::Dense(l) => l.forward(x, keep),
        }
    }

    /// Inference-mode forward pass without caching.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => conv2d(x, &l.weight, &l.bias),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Relu(_) => Ok(relu(x)),
            Layer::Sigmoid(_) => Ok(sigmoid(x)),
            Layer::MaxPool(_) => Ok(maxpool2d(x)?.0),
            Layer::GlobalAvgPool(_) => global_avg_pool(x),
            Layer::Dense(l) => dense(x, &l.weight, &l.bias),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::Sigmoid(l) => l.backward(grad_out),
            Layer::MaxPool(l) => l.backward(grad_out),
            Layer::GlobalAvgPool(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
        }
    }

    pub fn tensors(&self) -> Vec<Named<'_, T>> {
        let named = |prefix: &str, field: &str, tensor, trainable| Named {
            name: format!("{prefix}.{field}"),
            tensor,
            trainable,
        };
        match self {
            Layer::Conv(l) => vec![named(&l.name, "weight", &l.weight, true), named(&l.name, "bias", &l.bias, true)],
            Layer::Dense(l) => vec![named(&l.name, "weight", &l.weight, true), named(&l.name, "bias", &l.bias, true)],
            Layer::BatchNorm(l) => vec![
                named(&l.name, "gamma", &l.gamma, true),
                named(&l.name, "beta", &l.beta, true),
                named(&l.name, "moving_mean", &l.moving_mean, false),
                named(&l.name, "moving_var", &l.moving_var, false),
            ],
            _ => Vec::new(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        fn named<'a, T>(prefix: &str, field: &str, tensor: &'a mut Tensor<T>, trainable: bool) -> NamedMut<'a, T> {
            NamedMut {
                name: format!("{prefix}.{field}"),
                tensor,
                trainable,
            }
        }
        match self {
            Layer::Conv(l) => vec![named(&l.name, "weight", &mut l.weight, true), named(&l.name, "bias", &mut l.bias, true)],
            Layer::Dense(l) => vec![named(&l.name, "weight", &mut l.weight, true), named(&l.name, "bias", &mut l.bias, true)],
            Layer::BatchNorm(l) => vec![
                named(&l.name, "gamma", &mut l.gamma, true),
                named(&l.name, "beta", &mut l.beta, true),
                named(&l.name, "moving_mean", &mut l.moving_mean, false),
                named(&l.name, "moving_var", &mut l.moving_var, false),
            ],
            _ => Vec::new(),
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, keep: bool) -> Result<Tensor<T>> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x, mode, keep)?;
        for layer in iter {
            h = layer.forward(&h, mode, keep)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut iter = self.layers.iter();
        let Some(first) = iter.next() else {
            return Ok(x.clone());
        };
        let mut h = first.infer(x)?;
        for layer in iter {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn tensors(&self) -> Vec<Named<'_, T>> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.tensor.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.tensor.len()).sum()
    }
}
