//! Seeded uniform weight initializers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn uniform<T: Scalar>(shape: &[usize], limit: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..=limit)))
        .collect();
    Tensor::new(shape, data).expect("shape/product agree")
}

/// Uniform in `±sqrt(6 / fan_in)`.
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("he_uniform: fan_in must be positive".into()));
    }
    Ok(uniform(shape, he_limit(fan_in), seed))
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument("glorot_uniform: fans must be positive".into()));
    }
    Ok(uniform(shape, glorot_limit(fan_in, fan_out), seed))
}

pub fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_respects_bound() {
        let t: Tensor<f32> = he_uniform(&[1000], 6, 3).unwrap();
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn glorot_respects_bound() {
        let t: Tensor<f64> = glorot_uniform(&[128, 8], 128, 8, 9).unwrap();
        let lim = glorot_limit(128, 8);
        assert!(t.data().iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn deterministic_per_seed() {
        let a: Tensor<f32> = he_uniform(&[3, 3, 3, 16], 27, 42).unwrap();
        let b: Tensor<f32> = he_uniform(&[3, 3, 3, 16], 27, 42).unwrap();
        let c: Tensor<f32> = he_uniform(&[3, 3, 3, 16], 27, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_variance_matches_uniform() {
        // Var(U(-l, l)) = l^2 / 3
        for (t, lim) in [
            (he_uniform::<f64>(&[100_000], 27, 1).unwrap(), he_limit(27)),
            (glorot_uniform::<f64>(&[100_000], 128, 18, 2).unwrap(), glorot_limit(128, 18)),
        ] {
            let n = t.len() as f64;
            let mean = t.sum() / n;
            let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let analytic = lim * lim / 3.0;
            assert!(((var - analytic) / analytic).abs() < 0.05, "{var} vs {analytic}");
        }
    }

    #[test]
    fn zero_fan_rejected() {
        assert!(he_uniform::<f32>(&[1], 0, 0).is_err());
        assert!(glorot_uniform::<f32>(&[1], 4, 0, 0).is_err());
    }
}
