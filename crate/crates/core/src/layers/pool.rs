use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2×2 max pooling with stride 2; returns the output and the flat input
/// index of each selected maximum.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = x.nhwc("maxpool2d")?;
    if h % 2 != 0 {
        return Err(Error::dim("maxpool2d", "1 (height)", "even", h));
    }
    if w % 2 != 0 {
        return Err(Error::dim("maxpool2d", "2 (width)", "even", w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(&[n, oh, ow, c], out)?, argmax))
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.nhwc("global_avg_pool")?;
    let area = T::from_usize(h * w).unwrap();
    let mut out = vec![T::zero(); n * c];
    for (b, sample) in x.data().chunks_exact(h * w * c).enumerate() {
        let dst = &mut out[b * c..(b + 1) * c];
        for px in sample.chunks_exact(c) {
            for (d, &v) in dst.iter_mut().zip(px) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d /= area);
    }
    Tensor::new(&[n, c], out)
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, keep: bool) -> Result<Tensor<T>> {
        let (y, argmax) = maxpool2d(x)?;
        self.cache = keep.then(|| (x.shape().to_vec(), argmax));
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("maxpool2d: backward without forward".into()))?;
        let mut dx = Tensor::zeros(&shape);
        let d = dx.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            d[idx] += g;
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, keep: bool) -> Result<Tensor<T>> {
        let y = global_avg_pool(x)?;
        self.input_shape = keep.then(|| x.shape().to_vec());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::InvalidArgument("global_avg_pool: backward without forward".into()))?;
        Ok(spread_avg_grad(grad_out, &shape))
    }
}

/// Gradient of global average pooling: each cell receives `g / (H·W)`.
pub(crate) fn spread_avg_grad<T: Scalar>(grad_out: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let (h, w, c) = (shape[1], shape[2], shape[3]);
    let area = T::from_usize(h * w).unwrap();
    let mut dx = Tensor::zeros(shape);
    for (b, sample) in dx.data_mut().chunks_exact_mut(h * w * c).enumerate() {
        let g = grad_out.row(b);
        for px in sample.chunks_exact_mut(c) {
            for (d, &v) in px.iter_mut().zip(g) {
                *d = v / area;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_single_window() {
        let x = Tensor::new(&[1, 2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 1]);
        assert!(maxpool2d(&x).unwrap_err().to_string().contains("height"));
        let x = Tensor::<f32>::zeros(&[1, 4, 5, 1]);
        assert!(maxpool2d(&x).unwrap_err().to_string().contains("width"));
    }

    #[test]
    fn maxpool_routes_gradient_to_max() {
        let x = Tensor::new(&[1, 2, 2, 1], vec![1.0f64, 5.0, 3.0, 4.0]).unwrap();
        let mut p = MaxPool2d::default();
        p.forward(&x, true).unwrap();
        let g = p.backward(&Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_of_constant_map() {
        let x = Tensor::full(&[2, 10, 10, 3], 3.5f32);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| (v - 3.5).abs() < 1e-6));
    }
}
