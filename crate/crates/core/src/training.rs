//! Baseline training and the two-phase transfer protocol.
//!
//! Phase 1 fits the extractor and localization head to landmark targets
//! with an L1 loss. Phase 2 keeps the localization head frozen and trains
//! the classification head while fine-tuning the extractor. Baselines train
//! extractor and classification head directly.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{apply_affine, AugmentConfig};
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::expression::Expression;
use crate::inference::argmax;
use crate::landmarks::{Feature, Point};
use crate::layers::Mode;
use crate::loss::{l1_loss_with_grad, softmax_cross_entropy};
use crate::network::{Network, NetworkKind, NetworkSpec, DEFAULT_INPUT_SIZE};
use crate::optim::{Adam, AdamConfig};
use crate::parallel;
use crate::preprocess::{gray_tensor_to_input, gray_to_tensor, normalize_landmarks, resize_tensor, Enhancement};
use crate::tensor::Tensor;

/// Seed offset between ensemble members.
pub const ENSEMBLE_SEED_STRIDE: u64 = 1000;

/// Epoch counts for one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochProfile {
    pub phase1: usize,
    pub phase2: usize,
    pub baseline: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetProfile {
    CkPlus,
    Jaffe,
    Sfew,
}

impl DatasetProfile {
    pub fn epochs(self) -> EpochProfile {
        match self {
            DatasetProfile::CkPlus => EpochProfile {
                phase1: 100,
                phase2: 300,
                baseline: 400,
            },
            DatasetProfile::Jaffe => EpochProfile {
                phase1: 100,
                phase2: 200,
                baseline: 300,
            },
            DatasetProfile::Sfew => EpochProfile {
                phase1: 200,
                phase2: 200,
                baseline: 400,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetProfile::CkPlus => "ckplus",
            DatasetProfile::Jaffe => "jaffe",
            DatasetProfile::Sfew => "sfew",
        }
    }
}

impl FromStr for DatasetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ckplus" | "ck+" | "ck" => Ok(DatasetProfile::CkPlus),
            "jaffe" => Ok(DatasetProfile::Jaffe),
            "sfew" => Ok(DatasetProfile::Sfew),
            other => Err(Error::InvalidArgument(format!("unknown dataset profile `{other}`"))),
        }
    }
}

/// Stop when the monitored epoch loss has not improved by `min_delta`
/// for `patience` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 20,
            min_delta: 1e-4,
        }
    }
}

/// Multiplies the learning rate by `factor` once `at_fraction` of a
/// phase's epochs have run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrDrop {
    pub at_fraction: f64,
    pub factor: f64,
}

impl LrDrop {
    /// Learning rate for 1-based `epoch` of `epochs`.
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        if epoch as f64 > self.at_fraction * epochs as f64 {
            base * self.factor
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase1_lr: f64,
    pub phase2_lr: f64,
    pub baseline_lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: EpochProfile,
    pub seed: u64,
    pub input_size: usize,
    pub enhancement: Enhancement,
    pub augment: AugmentConfig,
    pub early_stop: Option<EarlyStop>,
    /// Optional late-phase learning-rate drop; off by default.
    pub lr_drop: Option<LrDrop>,
    /// Compare localization-head bytes after every phase-2 epoch.
    pub verify_freeze: bool,
    /// Recompute batch-norm statistics over the clean training inputs at
    /// the end of each phase.
    pub recalibrate_bn: bool,
    /// Upper bound on networks trained concurrently.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_lr: 0.01,
            phase2_lr: 0.0001,
            baseline_lr: 0.01,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            epochs: DatasetProfile::CkPlus.epochs(),
            seed: 0,
            input_size: DEFAULT_INPUT_SIZE,
            enhancement: Enhancement::CLAHE_DEFAULT,
            augment: AugmentConfig::default(),
            early_stop: None,
            lr_drop: None,
            verify_freeze: true,
            recalibrate_bn: true,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn for_profile(profile: DatasetProfile) -> Self {
        Self {
            epochs: profile.epochs(),
            ..Self::default()
        }
    }

    /// Settings that converge on the synthetic faces within minutes on one
    /// CPU core: 32 px inputs, short phases with a late learning-rate drop,
    /// a faster phase-2 rate and two copies per image.
    pub fn synthetic() -> Self {
        Self {
            phase2_lr: 1e-3,
            epochs: EpochProfile {
                phase1: 30,
                phase2: 40,
                baseline: 40,
            },
            input_size: 32,
            enhancement: Enhancement::None,
            augment: AugmentConfig {
                multiplier: 2,
                ..AugmentConfig::default()
            },
            lr_drop: Some(LrDrop {
                at_fraction: 0.7,
                factor: 0.1,
            }),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("phase1_lr", self.phase1_lr),
            ("phase2_lr", self.phase2_lr),
            ("baseline_lr", self.baseline_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if let Some(d) = self.lr_drop {
            if !(0.0..=1.0).contains(&d.at_fraction) || !(d.factor > 0.0) {
                return Err(Error::InvalidArgument(format!("invalid learning-rate drop {d:?}")));
            }
        }
        self.augment.validate()
    }

    fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One decoded training image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub subject_id: String,
    /// `[H, W, 1]` gray values after contrast enhancement.
    pub image: Tensor<f32>,
    /// Crop-pixel landmarks, when annotated.
    pub landmarks: Option<Vec<Point>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub classes: Vec<Expression>,
    pub samples: Vec<TrainSample>,
}

impl TrainingSet {
    /// Loads and enhances the manifest rows at `indices`.
    pub fn from_manifest(manifest: &Manifest, indices: &[usize], enhancement: Enhancement) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                let s = &manifest.samples[i];
                let img = enhancement.apply(&manifest.load_image(s)?);
                Ok(TrainSample {
                    id: s.image_path.display().to_string(),
                    subject_id: s.subject_id.clone(),
                    image: gray_to_tensor(&img),
                    landmarks: (!s.landmarks.is_empty()).then(|| s.landmarks.clone()),
                    label: manifest.label_of(s),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classes: manifest.classes.clone(),
            samples,
        })
    }

    pub fn all(manifest: &Manifest, enhancement: Enhancement) -> Result<Self> {
        let idx: Vec<usize> = (0..manifest.samples.len()).collect();
        Self::from_manifest(manifest, &idx, enhancement)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyDataset("no training samples".into()))
        } else {
            Ok(())
        }
    }

    fn require_landmarks(&self) -> Result<()> {
        let missing: Vec<String> = self
            .samples
            .iter()
            .filter(|s| s.landmarks.as_ref().map_or(true, |l| l.len() != crate::landmarks::NUM_LANDMARKS))
            .map(|s| s.id.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingLandmarks(missing))
        }
    }

    /// Network inputs `[N, size, size, 3]` without augmentation.
    pub fn inputs(&self, size: usize) -> Result<Tensor<f32>> {
        stack(&self.samples.iter().map(|s| gray_tensor_to_input(&s.image, size)).collect::<Result<Vec<_>>>()?)
    }

    /// Normalized landmark targets `[N, z]` for `indices`.
    pub fn landmark_targets(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        self.require_landmarks()?;
        let rows = self
            .samples
            .iter()
            .map(|s| {
                let (h, w) = (s.image.shape()[0], s.image.shape()[1]);
                Ok(select(&normalize_landmarks(s.landmarks.as_ref().unwrap(), w, h)?, indices))
            })
            .collect::<Result<Vec<_>>>()?;
        let z = indices.len() * 2;
        Tensor::new(&[rows.len(), z], rows.concat())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

fn select(points: &[Point], indices: &[usize]) -> Vec<f32> {
    indices.iter().flat_map(|&i| points[i]).collect()
}

pub(crate) fn stack(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items
        .first()
        .ok_or_else(|| Error::EmptyDataset("nothing to stack".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::dim("stack", "item", format!("{:?}", first.shape()), format!("{:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(&shape, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Baseline,
    Landmarks,
    Classify,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Landmarks => "phase1",
            Phase::Classify => "phase2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    /// Running training accuracy; `None` for landmark regression.
    pub accuracy: Option<f64>,
}

/// `epoch,phase,loss,accuracy` lines with a header.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,phase,loss,accuracy\n");
    for m in metrics {
        let acc = m.accuracy.map(|a| format!("{a}")).unwrap_or_default();
        writeln!(s, "{},{},{},{acc}", m.epoch, m.phase.name(), m.loss).unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub metrics: Vec<EpochMetrics>,
    /// The landmark model as it stood after phase 1, for two-phase runs.
    pub phase1: Option<Network<f32>>,
}

/// Batches for one phase: cached clean inputs plus on-the-fly augmentation.
struct Feeder<'a> {
    set: &'a TrainingSet,
    size: usize,
    clean: Vec<Tensor<f32>>,
    /// Images pre-shrunk to at most twice the input size; augmentation
    /// warps these instead of the full crops.
    warp_base: Vec<(Tensor<f32>, f32)>,
    /// Landmark indices for regression targets.
    targets: Option<Vec<usize>>,
    augment: AugmentConfig,
}

impl<'a> Feeder<'a> {
    fn new(set: &'a TrainingSet, size: usize, targets: Option<Vec<usize>>, augment: AugmentConfig) -> Result<Self> {
        let clean = set
            .samples
            .iter()
            .map(|s| gray_tensor_to_input(&s.image, size))
            .collect::<Result<Vec<_>>>()?;
        let warp_base = if augment.multiplier > 1 {
            set.samples
                .iter()
                .map(|s| {
                    let (h, w) = (s.image.shape()[0], s.image.shape()[1]);
                    let scale = ((2 * size) as f32 / h.max(w) as f32).min(1.0);
                    let (bh, bw) = (((h as f32 * scale).round() as usize).max(1), ((w as f32 * scale).round() as usize).max(1));
                    Ok((resize_tensor(&s.image, bh, bw)?, scale))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            set,
            size,
            clean,
            warp_base,
            targets,
            augment,
        })
    }

    /// Presentation order for one epoch: `(sample, copy)` pairs, shuffled.
    fn epoch_order(&self, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        let mut order: Vec<(usize, usize)> = (0..self.set.len())
            .flat_map(|i| (0..self.augment.multiplier).map(move |c| (i, c)))
            .collect();
        order.shuffle(rng);
        order
    }

    fn batch(&self, items: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Option<Tensor<f32>>, Vec<usize>)> {
        let mut inputs = Vec::with_capacity(items.len());
        let mut targets = Vec::new();
        let mut labels = Vec::with_capacity(items.len());
        for &(i, copy) in items {
            let s = &self.set.samples[i];
            labels.push(s.label);
            let (h, w) = (s.image.shape()[0], s.image.shape()[1]);
            if copy == 0 {
                inputs.push(self.clean[i].clone());
                if let Some(idx) = &self.targets {
                    targets.extend(select(&normalize_landmarks(s.landmarks.as_ref().unwrap(), w, h)?, idx));
                }
            } else {
                let spec = self.augment.sample(rng);
                let (base, scale) = &self.warp_base[i];
                let pts: Vec<Point> = s
                    .landmarks
                    .iter()
                    .flatten()
                    .map(|p| p.map(|v| v * scale))
                    .collect();
                let (img, moved, _) = apply_affine(base, &pts, &spec)?;
                inputs.push(gray_tensor_to_input(&img, self.size)?);
                if let Some(idx) = &self.targets {
                    let (bh, bw) = (base.shape()[0], base.shape()[1]);
                    targets.extend(select(&normalize_landmarks(&moved, bw, bh)?, idx));
                }
            }
        }
        let targets = match &self.targets {
            Some(idx) => Some(Tensor::new(&[items.len(), idx.len() * 2], targets)?),
            None => None,
        };
        Ok((stack(&inputs)?, targets, labels))
    }
}

fn localization_bytes(net: &Network<f32>) -> Vec<u32> {
    net.localization
        .iter()
        .flat_map(|l| l.tensors())
        .flat_map(|t| t.tensor.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

/// Runs `epochs` epochs of one phase, appending to `metrics`.
fn run_phase(
    net: &mut Network<f32>,
    set: &TrainingSet,
    phase: Phase,
    epochs: usize,
    learning_rate: f64,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    metrics: &mut Vec<EpochMetrics>,
) -> Result<()> {
    let landmark_idx = match phase {
        Phase::Landmarks => Some(
            net.spec
                .kind
                .landmark_indices()
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no landmark targets", net.spec.kind)))?,
        ),
        _ => None,
    };
    if phase == Phase::Landmarks && net.localization.is_none() {
        return Err(Error::InvalidArgument("network has no localization head".into()));
    }
    let feeder = Feeder::new(set, net.spec.input_size, landmark_idx, config.augment)?;
    let mut adam = Adam::new(config.adam(learning_rate));
    let frozen = (phase == Phase::Classify && config.verify_freeze).then(|| localization_bytes(net));
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=epochs {
        if let Some(d) = config.lr_drop {
            adam.config.learning_rate = d.rate(learning_rate, epoch, epochs);
        }
        let order = feeder.epoch_order(rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let (x, targets, labels) = feeder.batch(chunk, rng)?;
            net.zero_grad();
            let features = net.forward_features(&x, Mode::Train, true)?;
            let (loss, grad_features) = match phase {
                Phase::Landmarks => {
                    let head = net.localization.as_mut().expect("checked above");
                    let pred = head.forward(&features, Mode::Train, true)?;
                    let (loss, g) = l1_loss_with_grad(&pred, targets.as_ref().expect("landmark phase"))?;
                    (loss, head.backward(&g)?)
                }
                Phase::Baseline | Phase::Classify => {
                    let logits = net.classification.forward(&features, Mode::Train, true)?;
                    let (loss, g) = softmax_cross_entropy(&logits, &labels)?;
                    for (i, &l) in labels.iter().enumerate() {
                        correct += usize::from(argmax(logits.row(i)) == l);
                    }
                    (loss, net.classification.backward(&g)?)
                }
            };
            net.backward_features(&grad_features)?;
            let head = match phase {
                Phase::Landmarks => net.localization.as_mut().expect("checked above"),
                _ => &mut net.classification,
            };
            let params = net
                .extractor
                .tensors_mut()
                .into_iter()
                .chain(head.tensors_mut())
                .filter(|t| t.trainable)
                .map(|t| (t.name, t.tensor));
            adam.step(params)?;
            loss_sum += loss as f64 * chunk.len() as f64;
            seen += chunk.len();
        }
        let loss = loss_sum / seen as f64;
        let accuracy = (phase != Phase::Landmarks).then(|| correct as f64 / seen as f64);
        metrics.push(EpochMetrics {
            epoch,
            phase,
            loss,
            accuracy,
        });
        if let Some(before) = &frozen {
            if *before != localization_bytes(net) {
                return Err(Error::InvalidArgument(format!("localization head changed in epoch {epoch}")));
            }
        }
        if let Some(es) = config.early_stop {
            if loss < best - es.min_delta {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    break;
                }
            }
        }
    }
    for t in net.tensors_mut() {
        t.tensor.clear_grad();
    }
    if config.recalibrate_bn && epochs > 0 {
        net.recalibrate_batchnorm(&stack(&feeder.clean)?, config.batch_size)?;
    }
    Ok(())
}

fn stamp(net: &mut Network<f32>, config: &TrainConfig, seed: u64) {
    let p = &mut net.provenance;
    p.insert("seed".into(), seed.to_string());
    p.insert("batch_size".into(), config.batch_size.to_string());
    p.insert("enhancement".into(), config.enhancement.name().to_string());
    p.insert("augment_multiplier".into(), config.augment.multiplier.to_string());
}

fn spec_for(kind: NetworkKind, set: &TrainingSet, config: &TrainConfig) -> Result<NetworkSpec> {
    NetworkSpec::new(kind, set.classes.clone())?.with_input_size(config.input_size)
}

/// Trains extractor and classification head directly.
pub fn train_baseline(set: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    set.require_nonempty()?;
    let spec = spec_for(NetworkKind::Baseline, set, config)?;
    let mut net = Network::build(spec, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut metrics = Vec::new();
    run_phase(&mut net, set, Phase::Baseline, config.epochs.baseline, config.baseline_lr, config, &mut rng, &mut metrics)?;
    stamp(&mut net, config, config.seed);
    net.provenance.insert("baseline_epochs".into(), metrics.len().to_string());
    Ok(TrainOutcome { network: net, metrics, phase1: None })
}

/// Phase 1: landmark regression for a part (`Part(f)`) or all 68 points
/// (`FullTransfer`).
pub fn train_phase1_landmarks(set: &TrainingSet, kind: NetworkKind, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    set.require_nonempty()?;
    set.require_landmarks()?;
    if kind.landmark_outputs().is_none() {
        return Err(Error::InvalidArgument(format!("{kind} has no localization head")));
    }
    let spec = spec_for(kind, set, config)?;
    let mut net = Network::build(spec, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut metrics = Vec::new();
    run_phase(&mut net, set, Phase::Landmarks, config.epochs.phase1, config.phase1_lr, config, &mut rng, &mut metrics)?;
    stamp(&mut net, config, config.seed);
    net.provenance.insert("phase1_epochs".into(), metrics.len().to_string());
    Ok(TrainOutcome { network: net, metrics, phase1: None })
}

/// Phase 2: classification with the localization head frozen.
pub fn train_phase2_classify(phase1: Network<f32>, set: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    set.require_nonempty()?;
    if phase1.spec.classes != set.classes {
        return Err(Error::ClassMismatch(format!(
            "checkpoint classes {:?} differ from dataset classes {:?}",
            phase1.spec.classes, set.classes
        )));
    }
    let mut net = phase1;
    let seed = config.seed.wrapping_add(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut metrics = Vec::new();
    run_phase(&mut net, set, Phase::Classify, config.epochs.phase2, config.phase2_lr, config, &mut rng, &mut metrics)?;
    net.provenance.insert("phase2_epochs".into(), metrics.len().to_string());
    Ok(TrainOutcome { network: net, metrics, phase1: None })
}

/// Both phases back to back; metrics of the two phases are concatenated.
pub fn train_transfer(set: &TrainingSet, kind: NetworkKind, config: &TrainConfig) -> Result<TrainOutcome> {
    let p1 = train_phase1_landmarks(set, kind, config)?;
    let mut p2 = train_phase2_classify(p1.network.clone(), set, config)?;
    let mut metrics = p1.metrics;
    metrics.append(&mut p2.metrics);
    p2.metrics = metrics;
    p2.phase1 = Some(p1.network);
    Ok(p2)
}

/// What a full pipeline run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Baseline,
    FullTransfer,
    PartEnsemble,
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(PipelineKind::Baseline),
            "full" | "full-transfer" => Ok(PipelineKind::FullTransfer),
            "part-ensemble" | "ensemble" => Ok(PipelineKind::PartEnsemble),
            other => Err(Error::InvalidArgument(format!("unknown pipeline kind `{other}`"))),
        }
    }
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Baseline => "baseline",
            PipelineKind::FullTransfer => "full",
            PipelineKind::PartEnsemble => "part-ensemble",
        }
    }
}

/// Seed of ensemble member `index`.
pub fn member_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(ENSEMBLE_SEED_STRIDE * index as u64)
}

/// Trains every network of a pipeline. The part ensemble yields five
/// networks in feature order; baseline and full transfer yield `members`
/// independently seeded networks. Networks train concurrently up to the
/// worker limit.
pub fn train_full_pipeline(
    set: &TrainingSet,
    kind: PipelineKind,
    members: usize,
    config: &TrainConfig,
) -> Result<Vec<TrainOutcome>> {
    config.validate()?;
    set.require_nonempty()?;
    let jobs: Vec<(usize, NetworkKind)> = match kind {
        PipelineKind::PartEnsemble => Feature::ALL.iter().map(|&f| NetworkKind::Part(f)).enumerate().collect(),
        PipelineKind::FullTransfer => (0..members.max(1)).map(|i| (i, NetworkKind::FullTransfer)).collect(),
        PipelineKind::Baseline => (0..members.max(1)).map(|i| (i, NetworkKind::Baseline)).collect(),
    };
    let threads = parallel::worker_count(config.threads);
    parallel::map(jobs, threads, |(i, net_kind)| {
        let cfg = TrainConfig {
            seed: member_seed(config.seed, i),
            ..config.clone()
        };
        match net_kind {
            NetworkKind::Baseline => train_baseline(set, &cfg),
            k => train_transfer(set, k, &cfg),
        }
    })
    .into_iter()
    .collect()
}

/// Mean absolute error of normalized landmark predictions over `set`.
pub fn landmark_l1(net: &Network<f32>, set: &TrainingSet) -> Result<f64> {
    let idx = net
        .spec
        .kind
        .landmark_indices()
        .ok_or_else(|| Error::InvalidArgument("network has no landmark targets".into()))?;
    let targets = set.landmark_targets(&idx)?;
    let inputs = set.inputs(net.spec.input_size)?;
    let pred = predict_in_batches(net, &inputs, |n, x| n.landmarks(x))?;
    Ok(mean_abs_diff(pred.data(), targets.data()))
}

/// Error of predicting every target by the per-coordinate mean of
/// `train`'s targets.
pub fn mean_predictor_l1(train: &TrainingSet, eval: &TrainingSet, indices: &[usize]) -> Result<f64> {
    let t = train.landmark_targets(indices)?;
    let e = eval.landmark_targets(indices)?;
    let z = indices.len() * 2;
    let n = t.shape()[0] as f64;
    let mut mean = vec![0.0f64; z];
    for row in t.data().chunks(z) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v as f64 / n;
        }
    }
    let pred: Vec<f32> = (0..e.shape()[0]).flat_map(|_| mean.iter().map(|&m| m as f32)).collect();
    Ok(mean_abs_diff(&pred, e.data()))
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / a.len() as f64
}

/// Applies `f` over `[N, ...]` inputs in chunks of 32 rows.
pub(crate) fn predict_in_batches(
    net: &Network<f32>,
    inputs: &Tensor<f32>,
    f: impl Fn(&Network<f32>, &Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<Tensor<f32>> {
    let n = inputs.shape()[0];
    let per = inputs.len() / n.max(1);
    let mut out = Vec::new();
    let mut cols = 0;
    for start in (0..n).step_by(32) {
        let end = (start + 32).min(n);
        let mut shape = inputs.shape().to_vec();
        shape[0] = end - start;
        let x = Tensor::new(&shape, inputs.data()[start * per..end * per].to_vec())?;
        let y = f(net, &x)?;
        cols = y.shape()[1];
        out.extend_from_slice(y.data());
    }
    Tensor::new(&[n, cols], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_match_dataset_sizes() {
        assert_eq!(DatasetProfile::CkPlus.epochs(), EpochProfile { phase1: 100, phase2: 300, baseline: 400 });
        assert_eq!(DatasetProfile::Jaffe.epochs(), EpochProfile { phase1: 100, phase2: 200, baseline: 300 });
        assert_eq!(DatasetProfile::Sfew.epochs(), EpochProfile { phase1: 200, phase2: 200, baseline: 400 });
    }

    #[test]
    fn default_rates() {
        let c = TrainConfig::default();
        assert_eq!((c.phase1_lr, c.phase2_lr, c.baseline_lr), (0.01, 0.0001, 0.01));
        assert_eq!((c.batch_size, c.beta1, c.beta2, c.epsilon), (32, 0.9, 0.999, 1e-7));
    }

    #[test]
    fn invalid_config_rejected() {
        let c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { phase2_lr: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn metrics_csv_format() {
        let m = [
            EpochMetrics { epoch: 1, phase: Phase::Landmarks, loss: 0.5, accuracy: None },
            EpochMetrics { epoch: 1, phase: Phase::Classify, loss: 1.25, accuracy: Some(0.75) },
        ];
        assert_eq!(metrics_csv(&m), "epoch,phase,loss,accuracy\n1,phase1,0.5,\n1,phase2,1.25,0.75\n");
    }
}
