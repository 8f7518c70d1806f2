//! Construction of the baseline, full-transfer and part networks, and
//! their parameter and FLOP accounting.
//!
//! Feature extractor: four blocks of (conv3×3 → BN → ReLU) ×2, each
//! followed by 2×2 max pooling, with widths 16/32/64/128, then global
//! average pooling to a 128-vector. The localization head is
//! dense 128 (ReLU) → dense z (sigmoid); the classification head is
//! dense 128 (ReLU) ×2 → dense C producing logits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::expression::Expression;
use crate::init::{glorot_uniform, he_uniform};
use crate::landmarks::{Feature, NUM_LANDMARKS};
use crate::layers::conv::KERNEL;
use crate::layers::norm::{DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::layers::{
    global_avg_pool, softmax, BatchNorm, Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2d, Mode, Named,
    NamedMut, Relu, Sequential, Sigmoid,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_INPUT_SIZE: usize = 160;
pub const INPUT_CHANNELS: usize = 3;
pub const BLOCK_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub const FEATURE_DIM: usize = 128;
pub const HIDDEN_DIM: usize = 128;
/// Spatial reduction of the four pooling stages.
pub const DOWNSAMPLE: usize = 16;

const LANDMARK_OUTPUTS: [usize; 6] = [18, 20, 24, 34, 40, 2 * NUM_LANDMARKS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkKind {
    /// Extractor + classification head, trained directly.
    Baseline,
    /// Transfer from regression of all 68 landmarks.
    FullTransfer,
    /// Transfer from one facial feature's landmark subset.
    Part(Feature),
}

impl NetworkKind {
    pub fn landmark_outputs(self) -> Option<usize> {
        match self {
            NetworkKind::Baseline => None,
            NetworkKind::FullTransfer => Some(2 * NUM_LANDMARKS),
            NetworkKind::Part(f) => Some(f.outputs()),
        }
    }

    /// Landmark indices regressed by the localization head.
    pub fn landmark_indices(self) -> Option<Vec<usize>> {
        match self {
            NetworkKind::Baseline => None,
            NetworkKind::FullTransfer => Some((0..NUM_LANDMARKS).collect()),
            NetworkKind::Part(f) => Some(f.indices().collect()),
        }
    }

    pub fn feature(self) -> Option<Feature> {
        match self {
            NetworkKind::Part(f) => Some(f),
            _ => None,
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkKind::Baseline => f.write_str("baseline"),
            NetworkKind::FullTransfer => f.write_str("full"),
            NetworkKind::Part(feature) => write!(f, "part:{feature}"),
        }
    }
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(NetworkKind::Baseline),
            "full" => Ok(NetworkKind::FullTransfer),
            other => match other.strip_prefix("part:") {
                Some(f) => Ok(NetworkKind::Part(f.parse()?)),
                None => Err(Error::InvalidArgument(format!("unknown network kind `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    /// Output classes in canonical order; 7, or 8 when Contempt is present.
    pub classes: Vec<Expression>,
    /// Square input side in pixels; a multiple of 16.
    pub input_size: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl NetworkSpec {
    pub fn new(kind: NetworkKind, classes: Vec<Expression>) -> Result<Self> {
        let spec = Self {
            kind,
            classes,
            input_size: DEFAULT_INPUT_SIZE,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_epsilon: DEFAULT_EPSILON,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_input_size(mut self, size: usize) -> Result<Self> {
        self.input_size = size;
        self.validate()?;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_classes(self.num_classes())?;
        if !self.classes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "classes must be distinct and in canonical order".into(),
            ));
        }
        if self.num_classes() == 8 && !self.classes.contains(&Expression::Contempt) {
            return Err(Error::InvalidArgument("8 classes require Contempt".into()));
        }
        if self.input_size == 0 || self.input_size % DOWNSAMPLE != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} is not a positive multiple of {DOWNSAMPLE}",
                self.input_size
            )));
        }
        if let Some(z) = self.kind.landmark_outputs() {
            validate_landmark_outputs(z)?;
        }
        Ok(())
    }
}

fn validate_classes(c: usize) -> Result<()> {
    if c == 7 || c == 8 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("class count {c} is not 7 or 8")))
    }
}

fn validate_landmark_outputs(z: usize) -> Result<()> {
    if LANDMARK_OUTPUTS.contains(&z) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("landmark output count {z} not in {LANDMARK_OUTPUTS:?}")))
    }
}

fn layer_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn conv_layer<T: Scalar>(name: String, cin: usize, cout: usize, seed: u64) -> Result<Layer<T>> {
    let fan_in = KERNEL * KERNEL * cin;
    let weight = he_uniform(&[KERNEL, KERNEL, cin, cout], fan_in, seed)?;
    Ok(Layer::Conv(Conv2d::new(name, weight, Tensor::zeros(&[cout]))))
}

fn dense_layer<T: Scalar>(name: String, inputs: usize, outputs: usize, seed: u64) -> Result<Layer<T>> {
    let weight = glorot_uniform(&[inputs, outputs], inputs, outputs, seed)?;
    Ok(Layer::Dense(Dense::new(name, weight, Tensor::zeros(&[outputs]))))
}

/// The convolutional body up to (and including) the last pooling stage.
/// Global average pooling is applied separately by [`Network`].
pub fn build_feature_extractor<T: Scalar>(seed: u64, bn_momentum: f64, bn_epsilon: f64) -> Result<Sequential<T>> {
    let mut layers = Vec::new();
    let mut cin = INPUT_CHANNELS;
    let mut idx = 0;
    for (b, &width) in BLOCK_WIDTHS.iter().enumerate() {
        for c in 1..=2 {
            let prefix = format!("extractor.block{}", b + 1);
            layers.push(conv_layer(format!("{prefix}.conv{c}"), cin, width, layer_seed(seed, idx))?);
            layers.push(Layer::BatchNorm(BatchNorm::new(format!("{prefix}.bn{c}"), width, bn_momentum, bn_epsilon)));
            layers.push(Layer::Relu(Relu::default()));
            cin = width;
            idx += 1;
        }
        layers.push(Layer::MaxPool(MaxPool2d::default()));
    }
    Ok(Sequential::new(layers))
}

pub fn build_localization_head<T: Scalar>(z: usize, seed: u64) -> Result<Sequential<T>> {
    validate_landmark_outputs(z)?;
    Ok(Sequential::new(vec![
        dense_layer("localization.dense1".into(), FEATURE_DIM, HIDDEN_DIM, layer_seed(seed, 100))?,
        Layer::Relu(Relu::default()),
        dense_layer("localization.dense2".into(), HIDDEN_DIM, z, layer_seed(seed, 101))?,
        Layer::Sigmoid(Sigmoid::default()),
    ]))
}

/// Produces logits; softmax is applied by prediction and the loss.
pub fn build_classification_head<T: Scalar>(classes: usize, seed: u64) -> Result<Sequential<T>> {
    validate_classes(classes)?;
    Ok(Sequential::new(vec![
        dense_layer("classification.dense1".into(), FEATURE_DIM, HIDDEN_DIM, layer_seed(seed, 200))?,
        Layer::Relu(Relu::default()),
        dense_layer("classification.dense2".into(), HIDDEN_DIM, HIDDEN_DIM, layer_seed(seed, 201))?,
        Layer::Relu(Relu::default()),
        dense_layer("classification.dense3".into(), HIDDEN_DIM, classes, layer_seed(seed, 202))?,
    ]))
}

/// One network: shared feature extractor plus its heads.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub extractor: Sequential<T>,
    pub pool: GlobalAvgPool,
    pub localization: Option<Sequential<T>>,
    pub classification: Sequential<T>,
    /// Free-form training provenance carried into checkpoints.
    pub provenance: BTreeMap<String, String>,
}

impl<T: Scalar> Network<T> {
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let extractor = build_feature_extractor(seed, spec.bn_momentum, spec.bn_epsilon)?;
        let localization = spec
            .kind
            .landmark_outputs()
            .map(|z| build_localization_head(z, seed))
            .transpose()?;
        let classification = build_classification_head(spec.num_classes(), seed)?;
        Ok(Self {
            spec,
            extractor,
            pool: GlobalAvgPool::default(),
            localization,
            classification,
            provenance: BTreeMap::new(),
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, h, w, c) = x.nhwc("network input")?;
        let s = self.spec.input_size;
        if h != s {
            return Err(Error::dim("network input", "1 (height)", s, h));
        }
        if w != s {
            return Err(Error::dim("network input", "2 (width)", s, w));
        }
        if c != INPUT_CHANNELS {
            return Err(Error::dim("network input", "3 (channels)", INPUT_CHANNELS, c));
        }
        Ok(())
    }

    /// Last feature map `[N, s/16, s/16, 128]` and pooled features `[N, 128]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(x)?;
        let maps = self.extractor.infer(x)?;
        let pooled = global_avg_pool(&maps)?;
        Ok((maps, pooled))
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, f) = self.features(x)?;
        self.classification.infer(&f)
    }

    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        softmax(&self.logits(x)?)
    }

    /// Normalized landmark predictions `[N, z]`.
    pub fn landmarks(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let head = self
            .localization
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("network has no localization head".into()))?;
        let (_, f) = self.features(x)?;
        head.infer(&f)
    }

    /// Training-path forward through the extractor and pooling.
    pub fn forward_features(&mut self, x: &Tensor<T>, mode: Mode, keep: bool) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let maps = self.extractor.forward(x, mode, keep)?;
        self.pool.forward(&maps, keep)
    }

    /// Backward through pooling and the extractor given `dLoss/dfeatures`.
    pub fn backward_features(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.pool.backward(grad)?;
        self.extractor.backward(&g)
    }

    /// Sets every batch-norm moving mean and variance to the average of the
    /// batch statistics over `inputs`, taken in chunks of `batch` rows.
    pub fn recalibrate_batchnorm(&mut self, inputs: &Tensor<T>, batch: usize) -> Result<()> {
        self.check_input(inputs)?;
        let n = inputs.shape()[0];
        let per = inputs.len() / n;
        let batch = batch.max(1);
        let momenta: Vec<T> = self.batchnorms().map(|bn| bn.momentum).collect();
        let mut result = Ok(());
        for (k, start) in (0..n).step_by(batch).enumerate() {
            let end = (start + batch).min(n);
            let keep = T::from_usize(k).unwrap() / T::from_usize(k + 1).unwrap();
            self.batchnorms().for_each(|bn| bn.momentum = keep);
            let mut shape = inputs.shape().to_vec();
            shape[0] = end - start;
            let x = Tensor::new(&shape, inputs.data()[start * per..end * per].to_vec())?;
            if let Err(e) = self.extractor.forward(&x, Mode::Train, false) {
                result = Err(e);
                break;
            }
        }
        self.batchnorms().zip(momenta).for_each(|(bn, m)| bn.momentum = m);
        result
    }

    fn batchnorms(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        self.extractor.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    /// Removes the localization head, as done for deployment.
    pub fn without_localization(mut self) -> Self {
        self.localization = None;
        self
    }

    /// All parameters and buffers: extractor, localization, classification.
    pub fn tensors(&self) -> Vec<Named<'_, T>> {
        let mut out = self.extractor.tensors();
        if let Some(loc) = &self.localization {
            out.extend(loc.tensors());
        }
        out.extend(self.classification.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        let mut out = self.extractor.tensors_mut();
        if let Some(loc) = &mut self.localization {
            out.extend(loc.tensors_mut());
        }
        out.extend(self.classification.tensors_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.tensor.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.tensor.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::build(self.spec.clone(), 0).expect("spec already validated");
        if self.localization.is_none() {
            out.localization = None;
        }
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst.tensor = src.tensor.cast();
        }
        out.provenance = self.provenance.clone();
        out
    }
}

/// Parameter counts (trainable and batch-norm moving statistics).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub layers: Vec<(String, usize)>,
    pub extractor: usize,
    pub localization: usize,
    pub classification: usize,
}

impl ParamBreakdown {
    /// Everything a checkpoint stores.
    pub fn total(&self) -> usize {
        self.extractor + self.localization + self.classification
    }

    /// Deployed size: the localization head is dropped for inference.
    pub fn inference(&self) -> usize {
        self.extractor + self.classification
    }
}

pub fn extractor_param_layers() -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut cin = INPUT_CHANNELS;
    for (b, &w) in BLOCK_WIDTHS.iter().enumerate() {
        for c in 1..=2 {
            out.push((format!("extractor.block{}.conv{c}", b + 1), KERNEL * KERNEL * cin * w + w));
            out.push((format!("extractor.block{}.bn{c}", b + 1), 4 * w));
            cin = w;
        }
    }
    out
}

fn dense_params(name: &str, i: usize, o: usize) -> (String, usize) {
    (name.to_string(), i * o + o)
}

pub fn count_params(spec: &NetworkSpec) -> ParamBreakdown {
    let mut layers = extractor_param_layers();
    let extractor = layers.iter().map(|l| l.1).sum();
    let mut localization = 0;
    if let Some(z) = spec.kind.landmark_outputs() {
        let head = [
            dense_params("localization.dense1", FEATURE_DIM, HIDDEN_DIM),
            dense_params("localization.dense2", HIDDEN_DIM, z),
        ];
        localization = head.iter().map(|l| l.1).sum();
        layers.extend(head);
    }
    let head = [
        dense_params("classification.dense1", FEATURE_DIM, HIDDEN_DIM),
        dense_params("classification.dense2", HIDDEN_DIM, HIDDEN_DIM),
        dense_params("classification.dense3", HIDDEN_DIM, spec.num_classes()),
    ];
    let classification = head.iter().map(|l| l.1).sum();
    layers.extend(head);
    ParamBreakdown {
        layers,
        extractor,
        localization,
        classification,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopConvention {
    /// Dense layers of the classification head only.
    DenseHeads,
    /// Every convolution plus the classification head.
    FullNetwork,
}

/// FLOPs of one inference pass, counted as two per multiply-add and
/// ignoring bias, normalization, activation and pooling arithmetic.
pub fn count_flops(spec: &NetworkSpec, convention: FlopConvention) -> u64 {
    let head = (FEATURE_DIM * HIDDEN_DIM + HIDDEN_DIM * HIDDEN_DIM + HIDDEN_DIM * spec.num_classes()) as u64;
    let mut macs = head;
    if convention == FlopConvention::FullNetwork {
        let mut side = spec.input_size;
        let mut cin = INPUT_CHANNELS;
        for &w in &BLOCK_WIDTHS {
            let area = (side * side) as u64;
            macs += area * (KERNEL * KERNEL * cin * w) as u64;
            macs += area * (KERNEL * KERNEL * w * w) as u64;
            cin = w;
            side /= 2;
        }
    }
    2 * macs
}
