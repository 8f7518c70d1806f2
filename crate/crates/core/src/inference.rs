//! Single-network and ensemble prediction, plus latency profiling.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expression::Expression;
use crate::network::{Network, INPUT_CHANNELS};
use crate::preprocess::{prepare_input, Enhancement, GrayImage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_WARMUP: usize = 10;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Contrast enhancement recorded when the network was trained; none when
/// the provenance does not name one.
pub fn network_enhancement<T>(net: &Network<T>) -> Result<Enhancement> {
    net.provenance
        .get("enhancement")
        .map_or(Ok(Enhancement::None), |name| name.parse())
}

/// Enhances, resizes and normalizes a face crop exactly as training did;
/// returns `[size, size, 3]`.
pub fn input_for_network<T: Scalar>(net: &Network<T>, crop: &GrayImage) -> Result<Tensor<T>> {
    prepare_input(&network_enhancement(net)?.apply(crop), net.spec.input_size)
}

/// Adds a leading batch axis to a single `[H, W, C]` input.
fn as_batch<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    match input.shape().len() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(input.shape());
            input.clone().reshape(&shape)
        }
        4 if input.shape()[0] == 1 => Ok(input.clone()),
        _ => Err(Error::dim("predict_single", "rank", "[H, W, C] or [1, H, W, C]", format!("{:?}", input.shape()))),
    }
}

/// Class probabilities for one preprocessed crop.
pub fn predict_single<T: Scalar>(net: &Network<T>, input: &Tensor<T>) -> Result<Vec<T>> {
    Ok(net.probabilities(&as_batch(input)?)?.into_data())
}

/// `[N, C]` probabilities for a batch of crops.
pub fn predict_batch<T: Scalar>(net: &Network<T>, inputs: &Tensor<T>) -> Result<Tensor<T>> {
    net.probabilities(inputs)
}

/// Sums probability vectors in f64 and returns the argmax and the sums.
pub fn ensemble_vote(per_model: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    let first = per_model
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one model".into()))?;
    let c = first.len();
    let mut sums = vec![0.0f64; c];
    for (m, p) in per_model.iter().enumerate() {
        if p.len() != c {
            return Err(Error::ClassMismatch(format!("model {m} has {} classes, model 0 has {c}", p.len())));
        }
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    Ok((argmax(&sums), sums))
}

fn check_same_classes<T>(nets: &[Network<T>]) -> Result<&[Expression]> {
    let first = nets
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one model".into()))?;
    for (i, n) in nets.iter().enumerate() {
        if n.spec.classes != first.spec.classes {
            return Err(Error::ClassMismatch(format!("model {i} classes differ from model 0")));
        }
    }
    Ok(&first.spec.classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub name: Expression,
    pub scores: Vec<f64>,
    pub per_model: Vec<Vec<f64>>,
}

impl Prediction {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        writeln!(s, "label = {}", self.label).unwrap();
        writeln!(s, "name = {}", self.name).unwrap();
        writeln!(s, "scores = {}", join(&self.scores)).unwrap();
        for (i, p) in self.per_model.iter().enumerate() {
            writeln!(s, "model.{i} = {}", join(p)).unwrap();
        }
        s
    }
}

/// Sums the softmax outputs of every model and takes the argmax.
pub fn predict_ensemble<T: Scalar>(nets: &[Network<T>], input: &Tensor<T>) -> Result<Prediction> {
    let classes = check_same_classes(nets)?;
    let batch = as_batch(input)?;
    let per_model = nets
        .iter()
        .map(|n| Ok(n.probabilities(&batch)?.data().iter().map(|v| v.as_f64()).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let (label, scores) = ensemble_vote(&per_model)?;
    Ok(Prediction {
        label,
        name: classes[label],
        scores,
        per_model,
    })
}

/// Ensemble labels and summed scores for a batch `[N, H, W, C]`.
pub fn predict_ensemble_batch<T: Scalar>(nets: &[Network<T>], inputs: &Tensor<T>) -> Result<Vec<(usize, Vec<f64>)>> {
    check_same_classes(nets)?;
    let probs = nets.iter().map(|n| n.probabilities(inputs)).collect::<Result<Vec<_>>>()?;
    let n = inputs.shape()[0];
    (0..n)
        .map(|i| {
            let per: Vec<Vec<f64>> = probs.iter().map(|p| p.row(i).iter().map(|v| v.as_f64()).collect()).collect();
            ensemble_vote(&per)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl LatencyStats {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median_ms = if n % 2 == 1 {
            ms[n / 2]
        } else {
            (ms[n / 2 - 1] + ms[n / 2]) / 2.0
        };
        Self {
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub per_model: Vec<LatencyStats>,
    /// All models one after another on the same input.
    pub serial: LatencyStats,
    pub trials: usize,
    /// Checkpoint file sizes in bytes, when profiled from files.
    pub file_sizes: Vec<(String, u64)>,
}

impl ProfileReport {
    pub fn with_files(mut self, paths: &[impl AsRef<Path>]) -> Result<Self> {
        self.file_sizes = paths
            .iter()
            .map(|p| {
                let p = p.as_ref();
                Ok((p.display().to_string(), std::fs::metadata(p)?.len()))
            })
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

/// Times single-image forward passes, excluding image loading and
/// preprocessing. `warmup` untimed passes precede the trials.
pub fn profile_inference<T: Scalar>(nets: &[Network<T>], n_trials: usize, warmup: usize, seed: u64) -> Result<ProfileReport> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    if nets.is_empty() {
        return Err(Error::InvalidArgument("nothing to profile".into()));
    }
    let size = nets[0].spec.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..size * size * INPUT_CHANNELS)
        .map(|_| T::from_f64_lossy(rng.gen_range(-1.0..1.0)))
        .collect();
    let input = Tensor::new(&[1, size, size, INPUT_CHANNELS], data)?;
    let time = |net: &Network<T>| -> Result<f64> {
        let start = Instant::now();
        std::hint::black_box(net.probabilities(&input)?);
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    let mut per_model = Vec::with_capacity(nets.len());
    for net in nets {
        for _ in 0..warmup {
            time(net)?;
        }
        let ms = (0..n_trials).map(|_| time(net)).collect::<Result<Vec<_>>>()?;
        per_model.push(LatencyStats::from_samples(ms));
    }
    let serial = (0..n_trials)
        .map(|_| nets.iter().map(|n| time(n)).sum::<Result<f64>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileReport {
        per_model,
        serial: LatencyStats::from_samples(serial),
        trials: n_trials,
        file_sizes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn hand_summed_vote() {
        let p = vec![
            vec![0.6, 0.4],
            vec![0.6, 0.4],
            vec![0.1, 0.9],
            vec![0.1, 0.9],
            vec![0.1, 0.9],
        ];
        let (label, sums) = ensemble_vote(&p).unwrap();
        assert_eq!(label, 1);
        assert!((sums[0] - 1.5).abs() < 1e-12 && (sums[1] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(ensemble_vote(&[vec![0.5, 0.5], vec![1.0]]), Err(Error::ClassMismatch(_))));
        assert!(ensemble_vote(&[]).is_err());
    }

    #[test]
    fn median_of_even_count() {
        let s = LatencyStats::from_samples(vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.mean_ms, 2.5);
    }
}
