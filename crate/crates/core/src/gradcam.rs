//! Gradient-weighted class activation maps.
//!
//! `A^k` is the extractor output entering global average pooling (the last
//! feature map, `s/16 × s/16 × 128`). Channel weights are spatial means of
//! the gradient of the pre-softmax class score with respect to `A^k`; the
//! map is the ReLU of the weighted channel sum. Every call clones the head
//! it differentiates, so concurrent calls never share gradient state.

use crate::data::RgbImage;
use crate::error::{Error, Result};
use crate::layers::{GlobalAvgPool, Mode, Sequential};
use crate::network::Network;
use crate::preprocess::{resize_tensor, GrayImage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default overlay opacity of the heat colors.
pub const OVERLAY_ALPHA: f64 = 0.4;

/// Non-negative map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dim("heatmap", "values", width * height, values.len()));
        }
        Ok(Self { width, height, values })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Divides by the maximum; an all-zero map is returned unchanged.
    pub fn normalized(&self) -> Heatmap {
        let m = self.max();
        if m <= 0.0 {
            return self.clone();
        }
        Heatmap {
            values: self.values.iter().map(|v| v / m).collect(),
            ..self.clone()
        }
    }

    /// Bilinear resize with half-pixel centers.
    pub fn upsample(&self, width: usize, height: usize) -> Result<Heatmap> {
        let t = Tensor::new(&[self.height, self.width, 1], self.values.clone())?;
        let r = resize_tensor(&t, height, width)?;
        Heatmap::new(width, height, r.into_data())
    }

    /// Values in `[0, 1]` scaled to 8-bit gray.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        GrayImage::new(self.width, self.height, pixels).expect("sizes match")
    }
}

/// `∂y^c/∂A` for a batch-of-one `maps` `[1, u, v, K]`, through global
/// average pooling and `head`.
pub fn score_gradients<T: Scalar>(head: &Sequential<T>, maps: &Tensor<T>, class: usize) -> Result<Tensor<T>> {
    let (n, _, _, _) = maps.nhwc("gradcam maps")?;
    if n != 1 {
        return Err(Error::dim("gradcam maps", "0 (batch)", 1, n));
    }
    let mut pool = GlobalAvgPool::default();
    let mut head = head.clone();
    let pooled = pool.forward(maps, true)?;
    let scores = head.forward(&pooled, Mode::Infer, true)?;
    let classes = scores.shape()[1];
    if class >= classes {
        return Err(Error::InvalidArgument(format!("class {class} outside {classes} classes")));
    }
    let mut seed = Tensor::zeros(scores.shape());
    seed.data_mut()[class] = T::one();
    let g = head.backward(&seed)?;
    pool.backward(&g)
}

/// Spatial mean of each channel of `[1, u, v, K]` gradients.
pub fn importance_from_gradients<T: Scalar>(grads: &Tensor<T>) -> Result<Vec<f64>> {
    let (_, h, w, k) = grads.nhwc("gradcam gradients")?;
    let mut alpha = vec![0.0f64; k];
    for px in grads.data().chunks_exact(k) {
        for (a, g) in alpha.iter_mut().zip(px) {
            *a += g.as_f64();
        }
    }
    let z = (h * w) as f64;
    Ok(alpha.into_iter().map(|a| a / z).collect())
}

/// `relu(Σ_k α_k A^k)` over the spatial grid of `[1, u, v, K]` maps.
pub fn weighted_map<T: Scalar>(maps: &Tensor<T>, alpha: &[f64]) -> Result<Heatmap> {
    let (_, h, w, k) = maps.nhwc("gradcam maps")?;
    if alpha.len() != k {
        return Err(Error::dim("gradcam weights", "channels", k, alpha.len()));
    }
    let values = maps
        .data()
        .chunks_exact(k)
        .map(|px| px.iter().zip(alpha).map(|(a, w)| a.as_f64() * w).sum::<f64>().max(0.0))
        .collect();
    Heatmap::new(w, h, values)
}

fn last_maps<T: Scalar>(net: &Network<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let batch = match input.shape().len() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(input.shape());
            input.clone().reshape(&shape)?
        }
        _ => input.clone(),
    };
    Ok(net.features(&batch)?.0)
}

/// Channel weights `α_k^c` for one preprocessed input.
pub fn neuron_importance<T: Scalar>(net: &Network<T>, input: &Tensor<T>, class: usize) -> Result<Vec<f64>> {
    let maps = last_maps(net, input)?;
    importance_from_gradients(&score_gradients(&net.classification, &maps, class)?)
}

/// The class activation map at feature-map resolution.
pub fn gradcam_map<T: Scalar>(net: &Network<T>, input: &Tensor<T>, class: usize) -> Result<Heatmap> {
    let maps = last_maps(net, input)?;
    let alpha = importance_from_gradients(&score_gradients(&net.classification, &maps, class)?)?;
    weighted_map(&maps, &alpha)
}

/// Element-wise maximum of the max-normalized maps.
pub fn union_maps(maps: &[Heatmap]) -> Result<Heatmap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no heatmaps to combine".into()))?;
    let mut out = vec![0.0f64; first.values.len()];
    for m in maps {
        if (m.width, m.height) != (first.width, first.height) {
            return Err(Error::dim(
                "union_maps",
                "size",
                format!("{}x{}", first.width, first.height),
                format!("{}x{}", m.width, m.height),
            ));
        }
        for (o, v) in out.iter_mut().zip(m.normalized().values) {
            *o = o.max(v);
        }
    }
    Heatmap::new(first.width, first.height, out)
}

/// Piecewise-linear blue → green → red ramp over `[0, 1]`.
pub fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v < 0.5 {
        [0.0, 2.0 * v * 255.0, (1.0 - 2.0 * v) * 255.0]
    } else {
        [(2.0 * v - 1.0) * 255.0, (2.0 - 2.0 * v) * 255.0, 0.0]
    }
}

/// Upsamples the normalized map to the crop and blends each pixel as
/// `(1 − αh)·gray + αh·jet(h)`, so zero heat leaves the gray crop intact.
pub fn overlay(map: &Heatmap, crop: &GrayImage, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let heat = map.normalized().upsample(crop.width, crop.height)?;
    let pixels = crop
        .pixels
        .iter()
        .zip(&heat.values)
        .flat_map(|(&g, &h)| {
            let w = alpha * h;
            jet(h).map(|c| ((1.0 - w) * g as f64 + w * c).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    Ok(RgbImage {
        width: crop.width,
        height: crop.height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(h: usize, w: usize, k: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(&[1, h, w, k], data).unwrap()
    }

    #[test]
    fn importance_is_spatial_mean() {
        let g = maps(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(importance_from_gradients(&g).unwrap(), [2.5]);
    }

    #[test]
    fn weighted_map_clamps_negatives() {
        let a = maps(2, 2, 1, vec![-1.0, 2.0, 0.0, 3.0]);
        assert_eq!(weighted_map(&a, &[1.0]).unwrap().values, [0.0, 2.0, 0.0, 3.0]);
        let a = maps(1, 1, 2, vec![2.0, 5.0]);
        assert_eq!(weighted_map(&a, &[1.0, -1.0]).unwrap().values, [0.0]);
        let a = maps(1, 2, 2, vec![2.0, 5.0, 1.0, 1.0]);
        assert_eq!(weighted_map(&a, &[0.0, 0.0]).unwrap().values, [0.0, 0.0]);
    }

    #[test]
    fn union_with_zero_maps() {
        let m = Heatmap::new(2, 1, vec![1.0, 4.0]).unwrap();
        let z = Heatmap::new(2, 1, vec![0.0, 0.0]).unwrap();
        let u = union_maps(&[m.clone(), z.clone(), z.clone(), z.clone(), z]).unwrap();
        assert_eq!(u.values, [0.25, 1.0]);
    }

    #[test]
    fn zero_map_overlay_is_gray() {
        let crop = GrayImage::new(3, 2, vec![0, 50, 100, 150, 200, 255]).unwrap();
        let z = Heatmap::new(2, 2, vec![0.0; 4]).unwrap();
        let o = overlay(&z, &crop, OVERLAY_ALPHA).unwrap();
        let expected: Vec<u8> = crop.pixels.iter().flat_map(|&g| [g, g, g]).collect();
        assert_eq!(o.pixels, expected);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(jet(0.0), [0.0, 0.0, 255.0]);
        assert_eq!(jet(0.5), [0.0, 255.0, 0.0]);
        assert_eq!(jet(1.0), [255.0, 0.0, 0.0]);
    }
}
