//! Acceptance criteria 1–9. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.
//! Pass criterion numbers as arguments to run a subset.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use petl::checkpoint;
use petl::data::{generate_synthetic, SynthConfig};
use petl::eval::{cross_dataset_eval, evaluate, make_kfold_by_subject, make_loso, report, run_crossval, Column};
use petl::gradcam::{gradcam_map, importance_from_gradients, neuron_importance, score_gradients, weighted_map};
use petl::gradcheck::{check_function, grad_check, GradCheckConfig};
use petl::inference::{ensemble_vote, predict_ensemble};
use petl::init::glorot_uniform;
use petl::layers::{BatchNorm, Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2d, Mode, Relu, Sequential, Sigmoid};
use petl::loss::{l1_loss_with_grad, softmax_cross_entropy};
use petl::network::{count_params, Network, NetworkKind, NetworkSpec};
use petl::preprocess::{clahe, GrayImage};
use petl::training::{
    train_phase1_landmarks, train_phase2_classify, EpochProfile, PipelineKind, TrainConfig, TrainSample, TrainingSet,
};
use petl::{Expression, Feature, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 ------------------------------------------------------------------------

fn parameter_counts() -> Outcome {
    let spec = |kind| NetworkSpec::new(kind, Expression::ALL.to_vec()).map_err(e2s);
    let part = count_params(&spec(NetworkKind::Part(Feature::Mouth))?);
    ensure(part.extractor == 295_440, || format!("extractor {}", part.extractor))?;
    ensure(part.inference() == 329_496, || format!("part network {}", part.inference()))?;
    let mut ensemble = 0;
    for f in Feature::ALL {
        let s = spec(NetworkKind::Part(f))?;
        let counted = count_params(&s);
        let built = Network::<f32>::build(s, 0).map_err(e2s)?.without_localization();
        ensure(built.param_count() == counted.inference(), || {
            format!("{f}: built {} vs counted {}", built.param_count(), counted.inference())
        })?;
        ensemble += counted.inference();
    }
    ensure(ensemble == 1_647_480, || format!("ensemble {ensemble}"))?;
    Ok(format!(
        "extractor {} ({:.2}M), part {} ({:.2}M), ensemble {ensemble} ({:.2}M)",
        part.extractor,
        part.extractor as f64 / 1e6,
        part.inference(),
        part.inference() as f64 / 1e6,
        ensemble as f64 / 1e6
    ))
}

// 2 ------------------------------------------------------------------------

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    let w = glorot_uniform(&[3, 3, cin, cout], 9 * cin, 9 * cout, rng.gen()).unwrap();
    Layer::Conv(Conv2d::new("conv", w, random_tensor(&[cout], rng)))
}

fn dense(i: usize, o: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    let w = glorot_uniform(&[i, o], i, o, rng.gen()).unwrap();
    Layer::Dense(Dense::new("dense", w, random_tensor(&[o], rng)))
}

fn batchnorm(c: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    let mut bn = BatchNorm::new("bn", c, 0.99, 1e-3);
    bn.gamma = Tensor::new(&[c], (0..c).map(|_| rng.gen_range(0.5..1.5)).collect()).unwrap();
    bn.beta = random_tensor(&[c], rng);
    Layer::BatchNorm(bn)
}

/// Case `i` of the randomized suite: a fragment and its input, or a loss.
enum Case {
    Fragment(&'static str, Sequential<f64>, Tensor<f64>),
    L1(Tensor<f64>, Tensor<f64>),
    CrossEntropy(Tensor<f64>, Vec<usize>),
}

fn gradient_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..=3);
    let h = rng.gen_range(2..=5) * 2;
    let w = rng.gen_range(2..=5) * 2;
    let c = rng.gen_range(1..=3);
    let k = rng.gen_range(1..=4);
    let spatial = |rng: &mut ChaCha8Rng| random_tensor(&[n, h, w, c], rng);
    match i % 9 {
        0 => Case::Fragment("conv", Sequential::new(vec![conv(c, k, rng)]), spatial(rng)),
        1 => {
            let n = n + 1;
            let x = random_tensor(&[n, h, w, c], rng);
            Case::Fragment("batchnorm", Sequential::new(vec![batchnorm(c, rng)]), x)
        }
        2 => Case::Fragment("relu", Sequential::new(vec![Layer::Relu(Relu::default())]), spatial(rng)),
        3 => Case::Fragment("sigmoid", Sequential::new(vec![Layer::Sigmoid(Sigmoid::default())]), spatial(rng)),
        4 => Case::Fragment("maxpool", Sequential::new(vec![Layer::MaxPool(MaxPool2d::default())]), spatial(rng)),
        5 => {
            let layers = vec![Layer::GlobalAvgPool(GlobalAvgPool::default())];
            Case::Fragment("global_avg_pool", Sequential::new(layers), spatial(rng))
        }
        6 => {
            let d = rng.gen_range(2..=8);
            let x = random_tensor(&[n, d], rng);
            Case::Fragment("dense", Sequential::new(vec![dense(d, k, rng)]), x)
        }
        7 => {
            if i % 2 == 0 {
                let z = rng.gen_range(2..=12);
                Case::L1(random_tensor(&[n, z], rng), random_tensor(&[n, z], rng))
            } else {
                let classes = rng.gen_range(2..=8);
                let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
                Case::CrossEntropy(random_tensor(&[n, classes], rng), labels)
            }
        }
        _ => {
            let n = n + 1;
            let layers = vec![
                conv(c, k, rng),
                batchnorm(k, rng),
                Layer::Relu(Relu::default()),
                Layer::MaxPool(MaxPool2d::default()),
                Layer::GlobalAvgPool(GlobalAvgPool::default()),
                dense(k, 3, rng),
                Layer::Sigmoid(Sigmoid::default()),
            ];
            Case::Fragment("conv-bn-relu-pool-gap-dense-sigmoid", Sequential::new(layers), random_tensor(&[n, h, w, c], rng))
        }
    }
}

fn gradient_checks() -> Outcome {
    let config = GradCheckConfig {
        step: 1e-5,
        tolerance: 1e-4,
        ..GradCheckConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut kinds = std::collections::BTreeSet::new();
    for i in 0..100 {
        let report = match gradient_case(i, &mut rng) {
            Case::Fragment(name, fragment, x) => {
                kinds.insert(name);
                grad_check(&fragment, &x, Mode::Train, &config).map_err(e2s)?
            }
            Case::L1(pred, target) => {
                kinds.insert("l1_loss");
                let (_, g) = l1_loss_with_grad(&pred, &target).map_err(e2s)?;
                let f = |x: &[f64]| Ok(l1_loss_with_grad(&Tensor::new(pred.shape(), x.to_vec())?, &target)?.0);
                let all: Vec<usize> = (0..pred.len()).collect();
                check_function("l1_loss", f, pred.data(), g.data(), &all, &config).map_err(e2s)?
            }
            Case::CrossEntropy(logits, labels) => {
                kinds.insert("cross_entropy");
                let (_, g) = softmax_cross_entropy(&logits, &labels).map_err(e2s)?;
                let f = |x: &[f64]| Ok(softmax_cross_entropy(&Tensor::new(logits.shape(), x.to_vec())?, &labels)?.0);
                let all: Vec<usize> = (0..logits.len()).collect();
                check_function("cross_entropy", f, logits.data(), g.data(), &all, &config).map_err(e2s)?
            }
        };
        ensure(report.passed(), || format!("case {i}: {report:?}"))?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    Ok(format!(
        "100 cases over {} kinds, {checked} entries, worst rel. err {worst:.2e}",
        kinds.len()
    ))
}

// 3 ------------------------------------------------------------------------

const SYNTHETIC_BUDGET: Duration = Duration::from_secs(30 * 60);

fn synthetic_cross_validation() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(e2s)?;
    let manifest = generate_synthetic(&SynthConfig::default(), dir.path()).map_err(e2s)?;
    let plan = make_kfold_by_subject(&manifest.subjects(), 4, 3).map_err(e2s)?;
    let config = TrainConfig {
        seed: 1,
        ..TrainConfig::synthetic()
    };
    let run = run_crossval(&manifest, &plan, &[PipelineKind::PartEnsemble], &config, |fold| {
        let accs: Vec<String> = fold
            .columns
            .iter()
            .map(|(c, m)| format!("{c} {:.3}", m.accuracy()))
            .collect();
        println!("    fold {} ({:.0}s): {}", fold.index, start.elapsed().as_secs_f64(), accs.join(", "));
    })
    .map_err(e2s)?;
    let elapsed = start.elapsed();
    let summary = report(&run).map_err(e2s)?;

    let mut failures = Vec::new();
    let worst_l1 = summary.landmarks.iter().map(|l| l.l1).fold(0.0, f64::max);
    let worst_ratio = summary.landmarks.iter().map(|l| l.ratio()).fold(f64::INFINITY, f64::min);
    for l in &summary.landmarks {
        println!(
            "    {:<14} L1 {:.4}  mean predictor {:.4}  ratio {:.2}",
            l.kind.to_string(),
            l.l1,
            l.mean_predictor_l1,
            l.ratio()
        );
        if l.l1 >= 0.02 || l.ratio() < 5.0 {
            failures.push(format!("(a) {}: L1 {:.4}, ratio {:.2}", l.kind, l.l1, l.ratio()));
        }
    }
    if summary.landmarks.len() != 20 {
        failures.push(format!("(a) {} landmark models, expected 20", summary.landmarks.len()));
    }
    let ensemble = summary.column(Column::Ensemble).ok_or("no ensemble column")?.pooled.accuracy();
    if ensemble < 0.90 {
        failures.push(format!("(b) ensemble accuracy {ensemble:.4} < 0.90"));
    }
    let ordered = run
        .folds
        .iter()
        .filter(|f| {
            let e = f.matrix(Column::Ensemble).map_or(0.0, |m| m.accuracy());
            let best = Feature::ALL
                .iter()
                .filter_map(|&p| f.matrix(Column::Part(p)))
                .map(|m| m.accuracy())
                .fold(0.0, f64::max);
            e >= best
        })
        .count();
    if ordered < 3 {
        failures.push(format!("(c) ensemble ≥ best part in {ordered}/4 folds"));
    }
    if elapsed > SYNTHETIC_BUDGET {
        failures.push(format!("runtime {:.0}s over budget", elapsed.as_secs_f64()));
    }
    let parts: Vec<String> = Feature::ALL
        .iter()
        .filter_map(|&f| summary.column(Column::Part(f)))
        .map(|c| format!("{} {:.3}", c.column, c.pooled.accuracy()))
        .collect();
    let detail = format!(
        "ensemble {ensemble:.4} [{}], ensemble ≥ best part in {ordered}/4 folds, worst L1 {worst_l1:.4}, worst ratio {worst_ratio:.2}, {:.0}s",
        parts.join(", "),
        elapsed.as_secs_f64()
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

// 4 ------------------------------------------------------------------------

fn brute_force_argmax(per_model: &[Vec<f64>]) -> usize {
    let c = per_model[0].len();
    let mut sums = vec![0.0f64; c];
    for p in per_model {
        for j in 0..c {
            sums[j] += p[j];
        }
    }
    let mut best = 0;
    for j in 1..c {
        if sums[j] > sums[best] {
            best = j;
        }
    }
    best
}

fn random_probs(c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn ensemble_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ties = 0;
    for i in 0..500 {
        let c = rng.gen_range(2..=8);
        let quintuple: Vec<Vec<f64>> = if i % 10 == 0 {
            // Identical uniform vectors: every class ties.
            ties += 1;
            vec![vec![1.0 / c as f64; c]; 5]
        } else {
            (0..5).map(|_| random_probs(c, &mut rng)).collect()
        };
        let (label, _) = ensemble_vote(&quintuple).map_err(e2s)?;
        let expected = brute_force_argmax(&quintuple);
        ensure(label == expected, || format!("quintuple {i}: {label} vs {expected}"))?;
    }

    let nets: Vec<Network<f64>> = Feature::ALL
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let spec = NetworkSpec::new(NetworkKind::Part(f), Expression::ALL.to_vec())?.with_input_size(16)?;
            Network::build(spec, 100 + i as u64)
        })
        .collect::<petl::Result<_>>()
        .map_err(e2s)?;
    for i in 0..20 {
        let x = random_tensor(&[16, 16, 3], &mut rng);
        let p = predict_ensemble(&nets, &x).map_err(e2s)?;
        let batch = x.clone().reshape(&[1, 16, 16, 3]).map_err(e2s)?;
        let per: Vec<Vec<f64>> = nets
            .iter()
            .map(|n| n.probabilities(&batch).map(|t| t.into_data()))
            .collect::<petl::Result<_>>()
            .map_err(e2s)?;
        let expected = brute_force_argmax(&per);
        ensure(p.label == expected, || format!("network input {i}: {} vs {expected}", p.label))?;
    }
    Ok(format!("500 quintuples ({ties} all-tie cases) and 20 network inputs agree"))
}

// 5 ------------------------------------------------------------------------

fn gradcam_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // Zero-gradient channel: cut channel 7 out of the classification head.
    let spec = NetworkSpec::new(NetworkKind::Baseline, Expression::SEVEN.to_vec())
        .and_then(|s| s.with_input_size(32))
        .map_err(e2s)?;
    let mut net = Network::<f64>::build(spec, 9).map_err(e2s)?;
    if let Layer::Dense(d) = &mut net.classification.layers[0] {
        let out = d.weight.shape()[1];
        d.weight.data_mut()[7 * out..8 * out].fill(0.0);
    }
    let x = random_tensor(&[32, 32, 3], &mut rng);
    let alpha = neuron_importance(&net, &x, 3).map_err(e2s)?;
    ensure(alpha[7] == 0.0, || format!("alpha_7 = {}", alpha[7]))?;
    let maps = net.features(&x.clone().reshape(&[1, 32, 32, 3]).map_err(e2s)?).map_err(e2s)?.0;
    let mut without = maps.clone();
    let k = maps.shape()[3];
    for px in without.data_mut().chunks_exact_mut(k) {
        px[7] = 0.0;
    }
    let with_map = weighted_map(&maps, &alpha).map_err(e2s)?;
    let without_map = weighted_map(&without, &alpha).map_err(e2s)?;
    ensure(with_map == without_map, || "zero-gradient channel changed the map".into())?;

    // Non-negativity on random triples.
    let mut positive = 0;
    for i in 0..100 {
        let kind = match i % 3 {
            0 => NetworkKind::Baseline,
            1 => NetworkKind::FullTransfer,
            _ => NetworkKind::Part(Feature::ALL[i % 5]),
        };
        let spec = NetworkSpec::new(kind, Expression::ALL.to_vec())
            .and_then(|s| s.with_input_size(16 * rng.gen_range(1..=2)))
            .map_err(e2s)?;
        let s = spec.input_size;
        let net = Network::<f32>::build(spec, rng.gen()).map_err(e2s)?;
        let x = random_tensor(&[s, s, 3], &mut rng).cast::<f32>();
        let map = gradcam_map(&net, &x, rng.gen_range(0..8)).map_err(e2s)?;
        ensure(map.values.iter().all(|&v| v >= 0.0), || format!("triple {i}: negative entry"))?;
        positive += usize::from(map.max() > 0.0);
    }

    // Finite-difference check on a 2-channel toy net.
    let head = Sequential::new(vec![dense(2, 4, &mut rng), Layer::Relu(Relu::default()), dense(4, 3, &mut rng)]);
    let maps = random_tensor(&[1, 3, 3, 2], &mut rng);
    let mut worst = 0.0f64;
    for class in 0..3 {
        let analytic = importance_from_gradients(&score_gradients(&head, &maps, class).map_err(e2s)?).map_err(e2s)?;
        let score = |m: &Tensor<f64>| -> f64 {
            let pooled = petl::layers::global_avg_pool(m).unwrap();
            head.infer(&pooled).unwrap().data()[class]
        };
        let h = 1e-6;
        for ch in 0..2 {
            let mut total = 0.0;
            for cell in 0..9 {
                let idx = cell * 2 + ch;
                let mut plus = maps.clone();
                plus.data_mut()[idx] += h;
                let mut minus = maps.clone();
                minus.data_mut()[idx] -= h;
                total += (score(&plus) - score(&minus)) / (2.0 * h);
            }
            let numeric = total / 9.0;
            let rel = (analytic[ch] - numeric).abs() / analytic[ch].abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
            ensure(rel < 1e-3, || format!("class {class} channel {ch}: {} vs {numeric}", analytic[ch]))?;
        }
    }
    Ok(format!(
        "zero-gradient channel inert, 100 maps non-negative ({positive} non-zero), toy alpha worst rel. err {worst:.1e}"
    ))
}

// 6 ------------------------------------------------------------------------

/// Straightforward CLAHE: every tile histogram by scanning the image, and
/// every output pixel as a tent-weighted sum over all tiles, in exact
/// 64-bit integer arithmetic.
fn clahe_reference(img: &GrayImage, tiles: usize, clip_limit: f64) -> GrayImage {
    let (w, h) = (img.width, img.height);
    if img.pixels.iter().all(|&p| p == img.pixels[0]) {
        return img.clone();
    }
    let mut luts = vec![vec![0u64; 256]; tiles * tiles];
    for ty in 0..tiles {
        for tx in 0..tiles {
            let mut hist = vec![0u64; 256];
            let mut area = 0u64;
            for y in 0..h {
                for x in 0..w {
                    if (tx * w / tiles..(tx + 1) * w / tiles).contains(&x)
                        && (ty * h / tiles..(ty + 1) * h / tiles).contains(&y)
                    {
                        hist[img.pixels[y * w + x] as usize] += 1;
                        area += 1;
                    }
                }
            }
            let limit = ((clip_limit * area as f64 / 256.0).floor() as u64).max(1);
            let mut excess = 0;
            for v in hist.iter_mut() {
                if *v > limit {
                    excess += *v - limit;
                    *v = limit;
                }
            }
            for v in hist.iter_mut() {
                *v += excess / 256;
            }
            let residual = excess % 256;
            if residual > 0 {
                let stride = (256 / residual).max(1) as usize;
                for i in (0..256).step_by(stride).take(residual as usize) {
                    hist[i] += 1;
                }
            }
            let mut cdf = 0;
            for v in 0..256 {
                cdf += hist[v];
                luts[ty * tiles + tx][v] = ((2 * cdf * 255 + area) / (2 * area)).min(255);
            }
        }
    }
    // Weight of tile t at pixel i along an axis of length n, over 2n.
    let weight = |i: usize, t: usize, n: usize| -> u64 {
        let pos = (2 * i as i64 + 1) * tiles as i64 - n as i64;
        let two_n = 2 * n as i64;
        if pos <= 0 {
            return if t == 0 { two_n as u64 } else { 0 };
        }
        if pos >= two_n * (tiles as i64 - 1) {
            return if t == tiles - 1 { two_n as u64 } else { 0 };
        }
        (two_n - (pos - two_n * t as i64).abs()).max(0) as u64
    };
    let denom = (2 * w as u64) * (2 * h as u64);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = img.pixels[y * w + x] as usize;
            let mut num = 0u64;
            for ty in 0..tiles {
                for tx in 0..tiles {
                    num += weight(y, ty, h) * weight(x, tx, w) * luts[ty * tiles + tx][v];
                }
            }
            pixels.push(((num + denom / 2) / denom) as u8);
        }
    }
    GrayImage::new(w, h, pixels).unwrap()
}

fn clahe_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pixels_checked = 0;
    for i in 0..200 {
        let w = rng.gen_range(8..=32);
        let h = rng.gen_range(8..=32);
        let pixels: Vec<u8> = match i % 4 {
            0 => (0..w * h).map(|_| rng.gen()).collect(),
            1 => {
                let (a, b) = (rng.gen(), rng.gen());
                (0..w * h).map(|_| if rng.gen_bool(0.5) { a } else { b }).collect()
            }
            2 => {
                let base: u8 = rng.gen_range(0..200);
                (0..w * h).map(|_| base + rng.gen_range(0..8)).collect()
            }
            _ => (0..w * h).map(|k| ((k % w) * 255 / w) as u8 ^ rng.gen_range(0..4)).collect(),
        };
        let img = GrayImage::new(w, h, pixels).map_err(e2s)?;
        let clip = [1.0, 2.0, 4.0][i % 3];
        let got = clahe(&img, 8, 8, clip);
        let want = clahe_reference(&img, 8, clip);
        if let Some(k) = got.pixels.iter().zip(&want.pixels).position(|(a, b)| a != b) {
            return Err(format!(
                "image {i} ({w}x{h}, clip {clip}): pixel {k} is {} vs reference {}",
                got.pixels[k], want.pixels[k]
            ));
        }
        pixels_checked += w * h;
    }
    Ok(format!("200 images, {pixels_checked} pixels identical"))
}

// 7 ------------------------------------------------------------------------

fn protocol_assertions() -> Outcome {
    let ids: Vec<String> = (1..=118).map(|i| format!("S{i:03}")).collect();
    let plan = make_kfold_by_subject(&ids, 10, 12).map_err(e2s)?;
    let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
    ensure(sizes == [12, 12, 12, 12, 12, 12, 12, 12, 12, 10], || format!("fold sizes {sizes:?}"))?;
    for f in &plan.folds {
        ensure(f.test.iter().all(|s| !f.train.contains(s)), || "subject overlap".into())?;
        ensure(f.test.len() + f.train.len() == 118, || "fold does not cover all subjects".into())?;
    }
    let loso = make_loso(&ids[..10]).map_err(e2s)?;
    ensure(loso.len() == 10 && loso.folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 9), || {
        "LOSO plan shape".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let nets: Vec<Network<f32>> = (0..5)
        .map(|i| {
            let spec = NetworkSpec::new(NetworkKind::Part(Feature::ALL[i]), Expression::SEVEN.to_vec())?
                .with_input_size(16)?;
            Network::build(spec, 50 + i as u64)
        })
        .collect::<petl::Result<_>>()
        .map_err(e2s)?;
    let sample = |label: usize, rng: &mut ChaCha8Rng| TrainSample {
        id: String::new(),
        subject_id: "s".into(),
        image: Tensor::new(&[16, 16, 1], (0..256).map(|_| rng.gen_range(0.0..255.0)).collect()).unwrap(),
        landmarks: None,
        label,
    };
    let eight = TrainingSet {
        classes: Expression::ALL.to_vec(),
        samples: (0..40).map(|i| sample(i % 8, &mut rng)).collect(),
    };
    let contempt = Expression::ALL.iter().position(|&e| e == Expression::Contempt).unwrap();
    let contempt_rows = eight.samples.iter().filter(|s| s.label == contempt).count();
    let r = cross_dataset_eval(&nets, &eight).map_err(e2s)?;
    ensure(r.dropped == contempt_rows && r.dropped_classes == [Expression::Contempt], || {
        format!("dropped {} ({:?})", r.dropped, r.dropped_classes)
    })?;
    ensure(r.evaluation.matrix.size() == 7 && r.evaluated == 40 - contempt_rows, || "matrix shape".into())?;

    let seven = TrainingSet {
        classes: Expression::SEVEN.to_vec(),
        samples: (0..35).map(|i| sample(i % 7, &mut rng)).collect(),
    };
    let direct = evaluate(&nets, &seven).map_err(e2s)?;
    let mapped = cross_dataset_eval(&nets, &seven).map_err(e2s)?;
    ensure(mapped.evaluation == direct && mapped.dropped == 0, || "identity mapping differs from evaluate".into())?;

    let mut permuted = seven.clone();
    permuted.classes.reverse();
    for s in &mut permuted.samples {
        s.label = 6 - s.label;
    }
    let p = cross_dataset_eval(&nets, &permuted).map_err(e2s)?;
    ensure(p.evaluation == direct, || "permuted target class order changed the result".into())?;
    Ok(format!(
        "10 folds {sizes:?}, LOSO 10×1, {contempt_rows} Contempt rows dropped, identity mapping bit-identical"
    ))
}

// 8 ------------------------------------------------------------------------

fn freeze_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg = SynthConfig {
        n_subjects: 2,
        per_subject: 7,
        ..SynthConfig::default()
    };
    let manifest = generate_synthetic(&cfg, dir.path()).map_err(e2s)?;
    let set = TrainingSet::all(&manifest, petl::preprocess::Enhancement::None).map_err(e2s)?;
    let config = TrainConfig {
        epochs: EpochProfile {
            phase1: 2,
            phase2: 10,
            baseline: 0,
        },
        verify_freeze: false,
        ..TrainConfig::synthetic()
    };
    let p1 = train_phase1_landmarks(&set, NetworkKind::Part(Feature::Nose), &config).map_err(e2s)?;
    let bytes = |n: &Network<f32>| -> Vec<u8> {
        n.localization
            .as_ref()
            .unwrap()
            .tensors()
            .iter()
            .flat_map(|t| t.tensor.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    };
    let extractor = |n: &Network<f32>| n.extractor.tensors()[0].tensor.data().to_vec();
    let before = bytes(&p1.network);
    let extractor_before = extractor(&p1.network);
    let p2 = train_phase2_classify(p1.network, &set, &config).map_err(e2s)?;
    ensure(p2.metrics.len() == 10, || format!("{} phase-2 epochs", p2.metrics.len()))?;
    ensure(bytes(&p2.network) == before, || "localization head changed".into())?;
    ensure(extractor(&p2.network) != extractor_before, || "extractor did not train".into())?;
    Ok(format!("{} localization bytes unchanged over 10 epochs; extractor updated", before.len()))
}

// 9 ------------------------------------------------------------------------

fn checkpoint_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sizes = Vec::new();
    for kind in [NetworkKind::Baseline, NetworkKind::FullTransfer, NetworkKind::Part(Feature::Eyes)] {
        let spec = NetworkSpec::new(kind, Expression::ALL.to_vec()).map_err(e2s)?;
        let mut net = Network::<f32>::build(spec, rng.gen()).map_err(e2s)?;
        for t in net.tensors_mut() {
            if !t.trainable {
                t.tensor.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
            }
        }
        net.provenance.insert("seed".into(), "9".into());
        let a = dir.path().join("a.petl");
        let b = dir.path().join("b.petl");
        checkpoint::save(&net, &a).map_err(e2s)?;
        let loaded = checkpoint::load::<f32>(&a).map_err(e2s)?;
        checkpoint::save(&loaded, &b).map_err(e2s)?;
        let (x, y) = (std::fs::read(&a).map_err(e2s)?, std::fs::read(&b).map_err(e2s)?);
        ensure(x == y, || format!("{kind}: re-saved checkpoint differs"))?;
        sizes.push(format!("{kind} {} B", x.len()));
    }
    Ok(format!("byte-identical: {}", sizes.join(", ")))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 9] = [
        (1, "parameter counts", parameter_counts, Duration::from_secs(1)),
        (2, "gradient checks", gradient_checks, Duration::from_secs(120)),
        (3, "synthetic 4-fold part ensemble", synthetic_cross_validation, SYNTHETIC_BUDGET),
        (4, "ensemble policy oracle", ensemble_oracle, Duration::from_secs(1)),
        (5, "grad-cam properties", gradcam_properties, Duration::from_secs(60)),
        (6, "clahe oracle", clahe_oracle, Duration::from_secs(10)),
        (7, "protocol assertions", protocol_assertions, Duration::from_secs(60)),
        (8, "freeze contract", freeze_contract, Duration::from_secs(60)),
        (9, "checkpoint round trip", checkpoint_round_trip, Duration::from_secs(10)),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!(
                "{detail}; took {:.2}s, budget {:.0}s",
                elapsed.as_secs_f64(),
                budget.as_secs_f64()
            )),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS — {detail} [{:.2}s]", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL — {detail} [{:.2}s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
