//! Central finite-difference verification of analytic gradients.
//!
//! The probe loss is `sum(output ⊙ R)` for a fixed random projection `R`,
//! so every output element contributes a distinct weight to the gradient.
//! Entries whose one-sided differences disagree (the perturbation crossed
//! a ReLU/max-pool kink) are excluded and counted separately.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{Mode, Sequential};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per tensor; `None` checks every entry.
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and entry index of the worst comparison.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries excluded as non-differentiable points.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }

    fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `f` at `x`.
pub fn check_function(
    name: &str,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    entries: &[usize],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let h = config.step;
    let f0 = f(x)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tolerance: config.tolerance,
    };
    let mut probe = x.to_vec();
    for &i in entries {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        if relative_error(forward, backward) > 1e-2 && (forward - backward).abs() > 1e-6 {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((name.to_string(), i));
        }
    }
    Ok(report)
}

fn pick_entries(len: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

fn probe_loss(fragment: &mut Sequential<f64>, input: &Tensor<f64>, mode: Mode, projection: &[f64]) -> Result<f64> {
    let y = fragment.forward(input, mode, false)?;
    Ok(y.data().iter().zip(projection).map(|(a, b)| a * b).sum())
}

/// Checks gradients of every trainable parameter of `fragment` and of its
/// input.
pub fn grad_check(
    fragment: &Sequential<f64>,
    input: &Tensor<f64>,
    mode: Mode,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = fragment.clone();

    let mut analytic_net = base.clone();
    analytic_net.zero_grad();
    let out = analytic_net.forward(input, mode, true)?;
    let projection: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let input_grad = analytic_net.backward(&Tensor::new(out.shape(), projection.clone())?)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tolerance: config.tolerance,
    };

    let entries = pick_entries(input.len(), config.max_entries_per_tensor, &mut rng);
    let r = check_function(
        "input",
        |x| {
            let t = Tensor::new(input.shape(), x.to_vec())?;
            probe_loss(&mut base.clone(), &t, mode, &projection)
        },
        input.data(),
        input_grad.data(),
        &entries,
        config,
    )?;
    report.merge(r);

    let params: Vec<(String, Vec<f64>, Vec<f64>)> = analytic_net
        .tensors()
        .into_iter()
        .filter(|t| t.trainable)
        .map(|t| {
            let grad = t.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.tensor.len()]);
            (t.name, t.tensor.data().to_vec(), grad)
        })
        .collect();
    for (pi, (name, values, grad)) in params.iter().enumerate() {
        let entries = pick_entries(values.len(), config.max_entries_per_tensor, &mut rng);
        let r = check_function(
            name,
            |x| {
                let mut net = base.clone();
                let mut trainable = net.tensors_mut().into_iter().filter(|t| t.trainable);
                let target = trainable.nth(pi).expect("parameter index");
                target.tensor.data_mut().copy_from_slice(x);
                drop(trainable);
                probe_loss(&mut net, input, mode, &projection)
            },
            values,
            grad,
            &entries,
            config,
        )?;
        report.merge(r);
    }
    Ok(report)
}
