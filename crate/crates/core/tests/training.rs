use petl::data::{generate_synthetic, SynthConfig};
use petl::eval::evaluate;
use petl::loss::softmax_cross_entropy;
use petl::preprocess::Enhancement;
use petl::training::{
    landmark_l1, mean_predictor_l1, train_baseline, train_phase1_landmarks, train_phase2_classify, EpochProfile,
    TrainConfig, TrainingSet,
};
use petl::{Feature, Network, NetworkKind};

fn synthetic_set(subjects: usize, per_subject: usize) -> TrainingSet {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_subjects: subjects, per_subject, ..SynthConfig::default() };
    let m = generate_synthetic(&cfg, dir.path()).unwrap();
    TrainingSet::all(&m, Enhancement::None).unwrap()
}

fn config(phase1: usize, phase2: usize, baseline: usize) -> TrainConfig {
    TrainConfig { epochs: EpochProfile { phase1, phase2, baseline }, ..TrainConfig::synthetic() }
}

fn weights(net: &Network<f32>) -> Vec<f32> {
    net.tensors().iter().flat_map(|t| t.tensor.data().to_vec()).collect()
}

#[test]
fn baseline_fits_separable_synthetic_set() {
    let set = synthetic_set(10, 21);
    assert!(set.len() >= 200);
    let cfg = config(0, 0, 50);
    let out = train_baseline(&set, &cfg).unwrap();
    assert_eq!(out.metrics.len(), 50);
    let acc = evaluate(&[out.network], &set).unwrap().accuracy();
    assert!(acc >= 0.99, "train accuracy {acc}");
}

fn set_loss(net: &Network<f32>, set: &TrainingSet) -> f32 {
    let logits = net.logits(&set.inputs(net.spec.input_size).unwrap()).unwrap();
    softmax_cross_entropy(&logits, &set.labels()).unwrap().0
}

#[test]
fn one_epoch_lowers_loss_from_initialization() {
    let set = synthetic_set(4, 21);
    let init = train_baseline(&set, &config(0, 0, 0)).unwrap().network;
    let trained = train_baseline(&set, &config(0, 0, 1)).unwrap().network;
    let (before, after) = (set_loss(&init, &set), set_loss(&trained, &set));
    assert!(after < before, "loss {after} after one epoch vs {before} at init");
}

#[test]
fn baseline_is_deterministic_per_seed() {
    let set = synthetic_set(2, 7);
    let cfg = config(0, 0, 2);
    let a = train_baseline(&set, &cfg).unwrap();
    let b = train_baseline(&set, &cfg).unwrap();
    assert_eq!(a.metrics.last().unwrap().loss, b.metrics.last().unwrap().loss);
    assert_eq!(weights(&a.network), weights(&b.network));
    let c = train_baseline(&set, &TrainConfig { seed: 99, ..cfg }).unwrap();
    assert_ne!(weights(&a.network), weights(&c.network));
}

#[test]
fn zero_epochs_returns_initialization() {
    let set = synthetic_set(2, 7);
    let cfg = config(0, 0, 0);
    let trained = train_phase1_landmarks(&set, NetworkKind::Part(Feature::Jaw), &cfg).unwrap();
    let spec = trained.network.spec.clone();
    let fresh = Network::<f32>::build(spec, cfg.seed).unwrap();
    assert_eq!(weights(&trained.network), weights(&fresh));
    assert!(trained.metrics.is_empty());
}

#[test]
fn nose_landmarks_beat_mean_predictor() {
    let set = synthetic_set(4, 21);
    let cfg = config(30, 0, 0);
    let out = train_phase1_landmarks(&set, NetworkKind::Part(Feature::Nose), &cfg).unwrap();
    let indices = NetworkKind::Part(Feature::Nose).landmark_indices().unwrap();
    assert_eq!(indices.len() * 2, 18);
    let l1 = landmark_l1(&out.network, &set).unwrap();
    let baseline = mean_predictor_l1(&set, &set, &indices).unwrap();
    assert!(l1 < 0.02, "nose L1 {l1}");
    assert!(l1 < baseline, "L1 {l1} vs mean predictor {baseline}");
}

#[test]
fn phase2_keeps_localization_frozen() {
    let set = synthetic_set(2, 7);
    let cfg = config(1, 3, 0);
    let p1 = train_phase1_landmarks(&set, NetworkKind::FullTransfer, &cfg).unwrap();
    let loc = weights_of(p1.network.localization.as_ref().unwrap());
    let extractor = weights_of(&p1.network.extractor);
    let p2 = train_phase2_classify(p1.network, &set, &cfg).unwrap();
    assert_eq!(weights_of(p2.network.localization.as_ref().unwrap()), loc);
    assert_ne!(weights_of(&p2.network.extractor), extractor);
}

fn weights_of(seq: &petl::layers::Sequential<f32>) -> Vec<f32> {
    seq.tensors().iter().flat_map(|t| t.tensor.data().to_vec()).collect()
}

#[test]
fn phase1_requires_landmarks() {
    let mut set = synthetic_set(2, 7);
    set.samples[3].landmarks = None;
    let missing = set.samples[3].id.clone();
    let err = train_phase1_landmarks(&set, NetworkKind::Part(Feature::Eyes), &config(1, 0, 0)).unwrap_err();
    assert!(err.to_string().contains(&missing), "{err}");
}

#[test]
fn empty_set_is_rejected() {
    let set = TrainingSet { classes: petl::Expression::SEVEN.to_vec(), samples: Vec::new() };
    assert!(train_baseline(&set, &config(0, 0, 1)).is_err());
}
