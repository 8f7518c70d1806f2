//! Adam with bias-corrected moment estimates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One Adam update of `params` in place.
///
/// Rejects the step, leaving both `params` and `state` untouched, when any
/// gradient entry is non-finite.
pub fn adam_step<T: Scalar>(
    name: &str,
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("adam_step", name.to_string(), params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim("adam_step", format!("{name} state"), params.len(), state.m.len()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    state.t += 1;
    let b1 = T::from_f64_lossy(config.beta1);
    let b2 = T::from_f64_lossy(config.beta2);
    let eps = T::from_f64_lossy(config.epsilon);
    let lr = T::from_f64_lossy(config.learning_rate);
    let t = state.t as i32;
    let c1 = T::one() - T::from_f64_lossy(config.beta1.powi(t));
    let c2 = T::one() - T::from_f64_lossy(config.beta2.powi(t));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a set of named parameter tensors, reading each tensor's
/// gradient slot.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    states: BTreeMap<String, AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    /// Applies one step to every tensor; if any gradient is non-finite no
    /// tensor is modified.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (String, &'a mut Tensor<T>)>) -> Result<()> {
        let params: Vec<_> = params.into_iter().collect();
        for (name, p) in &params {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.clone()));
                }
            }
        }
        for (name, p) in params {
            let Some(grad) = p.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::new(grad.len()));
            adam_step(&name, p.data_mut(), &grad, state, &self.config)?;
        }
        Ok(())
    }

    pub fn state(&self, name: &str) -> Option<&AdamState<T>> {
        self.states.get(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3f64, -1.2];
        let mut s = AdamState::new(2);
        s.m = vec![0.0, 0.0];
        adam_step("p", &mut p, &[0.0, 0.0], &mut s, &AdamConfig::with_learning_rate(0.01)).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        adam_step("p", &mut p, &[1.0], &mut s, &AdamConfig::with_learning_rate(0.01)).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = -0.01 / (1 + 1e-7)
        assert!((p[0] + 0.01).abs() < 1e-6);
        assert!((p[0] + 0.01 / (1.0 + 1e-7)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_gives_constant_bias_corrected_step() {
        let cfg = AdamConfig::with_learning_rate(0.01);
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        adam_step("p", &mut p, &[1.0], &mut s, &cfg).unwrap();
        let d1 = p[0];
        adam_step("p", &mut p, &[1.0], &mut s, &cfg).unwrap();
        let d2 = p[0] - d1;
        // bias correction makes m_hat = g and v_hat = g^2 at every step
        assert!(((d2 - d1) / d1).abs() < 1e-9, "{d1} vs {d2}");
    }

    #[test]
    fn step_counter_increments() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0f32; 3];
        let mut s = AdamState::new(3);
        for i in 1..=4 {
            adam_step("p", &mut p, &[0.1, -0.2, 0.3], &mut s, &cfg).unwrap();
            assert_eq!(s.t, i);
        }
    }

    #[test]
    fn non_finite_gradient_rejected_with_name() {
        let mut p = vec![1.0f32];
        let mut s = AdamState::new(1);
        let err = adam_step("block1.conv1.weight", &mut p, &[f32::NAN], &mut s, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("block1.conv1.weight"));
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn optimizer_rejects_whole_step() {
        let mut a = Tensor::<f64>::full(&[2], 1.0);
        let mut b = Tensor::<f64>::full(&[2], 1.0);
        a.grad_mut().copy_from_slice(&[0.5, 0.5]);
        b.grad_mut().copy_from_slice(&[f64::INFINITY, 0.0]);
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.1));
        let err = opt.step([("a".to_string(), &mut a), ("b".to_string(), &mut b)]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(n) if n == "b"));
        assert_eq!(a.data(), &[1.0, 1.0]);
        assert!(opt.state("a").is_none());
    }
}
