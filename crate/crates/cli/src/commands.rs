//! Subcommand implementations. Each returns after writing its outputs and
//! its effective settings (`config.txt`) into the run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use petl::checkpoint;
use petl::data::{generate_synthetic, load_manifest, read_pgm, write_pgm, write_ppm, Manifest, SynthConfig};
use petl::eval::{cross_dataset_eval, evaluate, make_kfold_by_subject, make_loso, report, run_crossval, FoldPlan};
use petl::gradcam::{gradcam_map, overlay, union_maps};
use petl::inference::{input_for_network, predict_ensemble, profile_inference};
use petl::network::{count_flops, count_params, FlopConvention};
use petl::preprocess::Enhancement;
use petl::training::{
    metrics_csv, train_full_pipeline, DatasetProfile, EarlyStop, LrDrop, PipelineKind, TrainConfig, TrainingSet,
};
use petl::{Expression, Network};

use crate::config::{parse_bool, Key, Settings};
use crate::error::CliError;

pub struct Command {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [Key],
    pub run: fn(&mut Settings) -> Result<(), CliError>,
}

const THREADS: Key = Key::new("threads", "threads", None, "Upper bound on concurrent workers");

static SYNTH_KEYS: &[Key] = &[
    Key::new("out", "out", None, "Output directory for images and manifest").required(),
    Key::new("subjects", "subjects", Some("12"), "Number of subjects"),
    Key::new("per_subject", "per-subject", Some("21"), "Images per subject"),
    Key::new("seed", "seed", Some("7"), "Random seed"),
    Key::new("size", "size", Some("160"), "Image side in pixels"),
    Key::new("jitter_px", "jitter-px", Some("2.0"), "Landmark jitter std-dev in pixels at 160 px"),
    Key::new("variation", "variation", Some("0.10"), "Relative subject geometry variation"),
    Key::new("shift", "shift", Some("0.18"), "Maximum placement shift, fraction of the crop"),
    Key::new("face_size", "face-size", Some("0.75"), "Face size relative to the crop"),
];

macro_rules! training_keys {
    ($($extra:expr),* $(,)?) => {
        &[
            $($extra,)*
            Key::new("profile", "profile", Some("ckplus"), "Epoch profile: ckplus, jaffe, sfew or synthetic"),
            Key::new("seed", "seed", Some("0"), "Random seed"),
            Key::new("phase1_epochs", "phase1-epochs", None, "Landmark pre-training epochs"),
            Key::new("phase2_epochs", "phase2-epochs", None, "Classification fine-tuning epochs"),
            Key::new("baseline_epochs", "baseline-epochs", None, "Baseline training epochs"),
            Key::new("phase1_lr", "phase1-lr", None, "Phase-1 learning rate"),
            Key::new("phase2_lr", "phase2-lr", None, "Phase-2 learning rate"),
            Key::new("baseline_lr", "baseline-lr", None, "Baseline learning rate"),
            Key::new("batch_size", "batch-size", None, "Mini-batch size"),
            Key::new("input_size", "input-size", None, "Network input side in pixels"),
            Key::new("enhancement", "enhancement", None, "Contrast enhancement: clahe, he, cs or none"),
            Key::new("augment_multiplier", "augment-multiplier", None, "Copies per image per epoch (1 disables)"),
            Key::new("rotation_max", "rotation-max", None, "Maximum rotation in degrees"),
            Key::new("shear_max", "shear-max", None, "Maximum shear in degrees"),
            Key::new("translate_max", "translate-max", None, "Maximum translation, fraction of the crop"),
            Key::new("flip_prob", "flip-prob", None, "Horizontal flip probability"),
            Key::new("lr_drop_at", "lr-drop-at", None, "Fraction of a phase after which the rate drops"),
            Key::new("lr_drop_factor", "lr-drop-factor", None, "Rate multiplier after the drop"),
            Key::new("early_stop_patience", "early-stop-patience", None, "Epochs without improvement before stopping (0 disables)"),
            Key::new("recalibrate_bn", "recalibrate-bn", None, "Recompute batch-norm statistics after each phase"),
            THREADS,
        ]
    };
}

static TRAIN_KEYS: &[Key] = training_keys![
    Key::new("manifest", "manifest", None, "Dataset manifest").required(),
    Key::new("kind", "kind", Some("part-ensemble"), "baseline, full or part-ensemble"),
    Key::new("members", "members", Some("1"), "Independently seeded networks for baseline/full"),
    Key::new("out", "out", Some("runs/train"), "Run directory"),
];

static CROSSVAL_KEYS: &[Key] = training_keys![
    Key::new("manifest", "manifest", None, "Dataset manifest").required(),
    Key::new("protocol", "protocol", Some("kfold"), "kfold or loso"),
    Key::new("folds", "folds", Some("10"), "Number of folds (kfold)"),
    Key::new("group_size", "group-size", Some("12"), "Test subjects per fold (kfold)"),
    Key::new("pipelines", "pipelines", Some("baseline,full,part-ensemble"), "Pipelines to train").multi(),
    Key::new("out", "out", Some("runs/crossval"), "Run directory"),
];

static EVAL_KEYS: &[Key] = &[
    Key::new("checkpoints", "checkpoints", None, "Checkpoint files forming the ensemble").multi().required(),
    Key::new("manifest", "manifest", None, "Dataset manifest").required(),
    Key::new("subjects", "subjects", None, "Restrict to these subject ids").multi(),
    Key::new("out", "out", Some("runs/eval"), "Run directory"),
];

static CROSS_DATASET_KEYS: &[Key] = &[
    Key::new("checkpoints", "checkpoints", None, "Checkpoint files trained on the source dataset").multi().required(),
    Key::new("manifest", "manifest", None, "Target dataset manifest").required(),
    Key::new("out", "out", Some("runs/cross-dataset"), "Run directory"),
];

static PREDICT_KEYS: &[Key] = &[
    Key::new("checkpoints", "checkpoints", None, "Checkpoint files forming the ensemble").multi().required(),
    Key::new("image", "image", None, "Face crop (PGM)").required(),
    Key::new("out", "out", Some("runs/predict"), "Run directory"),
];

static GRADCAM_KEYS: &[Key] = &[
    Key::new("checkpoints", "checkpoints", None, "Checkpoint files").multi().required(),
    Key::new("image", "image", None, "Face crop (PGM)").required(),
    Key::new("class", "class", None, "Expression to explain; defaults to the ensemble prediction"),
    Key::new("alpha", "alpha", Some("0.4"), "Overlay opacity"),
    Key::new("out", "out", Some("runs/gradcam"), "Run directory"),
];

static PROFILE_KEYS: &[Key] = &[
    Key::new("checkpoints", "checkpoints", None, "Checkpoint files").multi().required(),
    Key::new("trials", "trials", Some("100"), "Timed forward passes per model"),
    Key::new("warmup", "warmup", Some("10"), "Untimed passes before timing"),
    Key::new("seed", "seed", Some("0"), "Seed of the random probe input"),
    Key::new("out", "out", Some("runs/profile"), "Run directory"),
];

pub static COMMANDS: &[Command] = &[
    Command {
        name: "synth",
        about: "Render a synthetic face dataset with ground-truth landmarks",
        keys: SYNTH_KEYS,
        run: synth,
    },
    Command {
        name: "train",
        about: "Train a baseline, full-transfer or part-ensemble pipeline",
        keys: TRAIN_KEYS,
        run: train,
    },
    Command {
        name: "eval",
        about: "Evaluate checkpoints on a labelled dataset",
        keys: EVAL_KEYS,
        run: eval,
    },
    Command {
        name: "crossval",
        about: "Subject-independent cross-validation",
        keys: CROSSVAL_KEYS,
        run: crossval,
    },
    Command {
        name: "cross-dataset",
        about: "Evaluate on a dataset with a different label set",
        keys: CROSS_DATASET_KEYS,
        run: cross_dataset,
    },
    Command {
        name: "predict",
        about: "Classify one face crop with an ensemble",
        keys: PREDICT_KEYS,
        run: predict,
    },
    Command {
        name: "gradcam",
        about: "Class activation maps and overlays for one face crop",
        keys: GRADCAM_KEYS,
        run: gradcam,
    },
    Command {
        name: "profile",
        about: "Parameter counts, FLOPs, file sizes and inference latency",
        keys: PROFILE_KEYS,
        run: profile,
    },
];

fn run_dir(settings: &Settings) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(settings.get::<String>("out")?);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path.as_ref(), contents).map_err(|e| CliError::io(path, e))
}

/// Writes the effective settings; called once every value is resolved.
fn log_settings(dir: &Path, settings: &Settings) -> Result<(), CliError> {
    write(dir.join("config.txt"), settings.to_text())
}

fn load_checkpoints(settings: &Settings) -> Result<(Vec<String>, Vec<Network<f32>>), CliError> {
    let paths = settings.list("checkpoints");
    let nets = paths
        .iter()
        .map(|p| checkpoint::load::<f32>(p).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((paths, nets))
}

fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

fn synth(settings: &mut Settings) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_subjects: settings.get("subjects")?,
        per_subject: settings.get("per_subject")?,
        seed: settings.get("seed")?,
        size: settings.get("size")?,
        jitter_px: settings.get("jitter_px")?,
        variation: settings.get("variation")?,
        shift: settings.get("shift")?,
        face_size: settings.get("face_size")?,
        ..SynthConfig::default()
    };
    let dir = run_dir(settings)?;
    log_settings(&dir, settings)?;
    let manifest = generate_synthetic(&cfg, &dir)?;
    println!(
        "wrote {} images of {} subjects to {}",
        manifest.samples.len(),
        cfg.n_subjects,
        dir.join("manifest.txt").display()
    );
    Ok(())
}

/// Builds the training configuration and records every resolved value.
fn training_config(settings: &mut Settings) -> Result<TrainConfig, CliError> {
    let profile: String = settings.get("profile")?;
    let mut cfg = match profile.as_str() {
        "synthetic" => TrainConfig::synthetic(),
        other => TrainConfig::for_profile(other.parse::<DatasetProfile>()?),
    };
    cfg.seed = settings.get("seed")?;
    macro_rules! take {
        ($key:literal, $field:expr) => {
            if let Some(v) = settings.opt($key)? {
                $field = v;
            }
        };
    }
    take!("phase1_epochs", cfg.epochs.phase1);
    take!("phase2_epochs", cfg.epochs.phase2);
    take!("baseline_epochs", cfg.epochs.baseline);
    take!("phase1_lr", cfg.phase1_lr);
    take!("phase2_lr", cfg.phase2_lr);
    take!("baseline_lr", cfg.baseline_lr);
    take!("batch_size", cfg.batch_size);
    take!("input_size", cfg.input_size);
    take!("augment_multiplier", cfg.augment.multiplier);
    take!("rotation_max", cfg.augment.rotation_max);
    take!("shear_max", cfg.augment.shear_max);
    take!("translate_max", cfg.augment.translate_max);
    take!("flip_prob", cfg.augment.flip_prob);
    if let Some(e) = settings.raw("enhancement") {
        cfg.enhancement = e.parse::<Enhancement>().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let drop_at: Option<f64> = settings.opt("lr_drop_at")?;
    let drop_factor: Option<f64> = settings.opt("lr_drop_factor")?;
    if drop_at.is_some() || drop_factor.is_some() {
        let current = cfg.lr_drop.unwrap_or(LrDrop {
            at_fraction: 1.0,
            factor: 1.0,
        });
        cfg.lr_drop = Some(LrDrop {
            at_fraction: drop_at.unwrap_or(current.at_fraction),
            factor: drop_factor.unwrap_or(current.factor),
        });
    }
    if let Some(p) = settings.opt::<usize>("early_stop_patience")? {
        cfg.early_stop = (p > 0).then(|| EarlyStop {
            patience: p,
            ..EarlyStop::default()
        });
    }
    if let Some(v) = settings.raw("recalibrate_bn") {
        cfg.recalibrate_bn = parse_bool("recalibrate_bn", v)?;
    }
    cfg.threads = settings.opt("threads")?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    settings.set("phase1_epochs", cfg.epochs.phase1);
    settings.set("phase2_epochs", cfg.epochs.phase2);
    settings.set("baseline_epochs", cfg.epochs.baseline);
    settings.set("phase1_lr", cfg.phase1_lr);
    settings.set("phase2_lr", cfg.phase2_lr);
    settings.set("baseline_lr", cfg.baseline_lr);
    settings.set("batch_size", cfg.batch_size);
    settings.set("input_size", cfg.input_size);
    settings.set("enhancement", cfg.enhancement.name());
    settings.set("augment_multiplier", cfg.augment.multiplier);
    settings.set("rotation_max", cfg.augment.rotation_max);
    settings.set("shear_max", cfg.augment.shear_max);
    settings.set("translate_max", cfg.augment.translate_max);
    settings.set("flip_prob", cfg.augment.flip_prob);
    let drop = cfg.lr_drop.unwrap_or(LrDrop {
        at_fraction: 1.0,
        factor: 1.0,
    });
    settings.set("lr_drop_at", drop.at_fraction);
    settings.set("lr_drop_factor", drop.factor);
    settings.set("early_stop_patience", cfg.early_stop.map_or(0, |e| e.patience));
    settings.set("recalibrate_bn", cfg.recalibrate_bn);
    Ok(cfg)
}

fn parse_pipeline(s: &str) -> Result<PipelineKind, CliError> {
    s.parse().map_err(|e: petl::Error| CliError::Usage(e.to_string()))
}

fn network_file_name(net: &Network<f32>, index: usize, members: usize) -> String {
    let base = net.spec.kind.to_string().replace(':', "-");
    if members > 1 && net.spec.kind.feature().is_none() {
        format!("{base}-{index}")
    } else {
        base
    }
}

fn train(settings: &mut Settings) -> Result<(), CliError> {
    let kind = parse_pipeline(&settings.get::<String>("kind")?)?;
    let members: usize = settings.get("members")?;
    let cfg = training_config(settings)?;
    let dir = run_dir(settings)?;
    log_settings(&dir, settings)?;
    let manifest = load_manifest(settings.get::<String>("manifest")?)?;
    let set = TrainingSet::all(&manifest, cfg.enhancement)?;
    let outcomes = train_full_pipeline(&set, kind, members, &cfg)?;
    let count = outcomes.len();
    for (i, o) in outcomes.iter().enumerate() {
        let name = network_file_name(&o.network, i, members);
        let path = dir.join(format!("{name}.{}", checkpoint::EXTENSION));
        checkpoint::save(&o.network, &path)?;
        write(dir.join(format!("{name}.metrics.csv")), metrics_csv(&o.metrics))?;
        let last = o.metrics.last();
        println!(
            "{}: {} epochs, final loss {:.4}",
            path.display(),
            o.metrics.len(),
            last.map_or(f64::NAN, |m| m.loss)
        );
    }
    println!("trained {count} network(s) into {}", dir.display());
    Ok(())
}

fn subject_subset(manifest: &Manifest, subjects: &[String]) -> Vec<usize> {
    (0..manifest.samples.len())
        .filter(|&i| subjects.is_empty() || subjects.contains(&manifest.samples[i].subject_id))
        .collect()
}

fn enhancement_of(nets: &[Network<f32>]) -> Result<Enhancement, CliError> {
    let e = petl::inference::network_enhancement(&nets[0])?;
    for n in nets {
        if petl::inference::network_enhancement(n)? != e {
            return Err(CliError::Usage("checkpoints were trained with different enhancements".into()));
        }
    }
    Ok(e)
}

fn eval(settings: &mut Settings) -> Result<(), CliError> {
    let dir = run_dir(settings)?;
    log_settings(&dir, settings)?;
    let (paths, nets) = load_checkpoints(settings)?;
    let manifest = load_manifest(settings.get::<String>("manifest")?)?;
    let idx = subject_subset(&manifest, &settings.list("subjects"));
    let set = TrainingSet::from_manifest(&manifest, &idx, enhancement_of(&nets)?)?;
    let mut text = String::new();
    for (p, n) in paths.iter().zip(&nets) {
        let e = evaluate(std::slice::from_ref(n), &set)?;
        writeln!(text, "{} = {:.4}", file_stem(p), e.accuracy()).unwrap();
    }
    let ensemble = evaluate(&nets, &set)?;
    writeln!(text, "ensemble = {:.4}", ensemble.accuracy()).unwrap();
    writeln!(text, "samples = {}", set.len()).unwrap();
    write!(text, "\n{}", ensemble.matrix).unwrap();
    write(dir.join("report.txt"), &text)?;
    write(dir.join("confusion.csv"), ensemble.matrix.to_csv())?;
    print!("{text}");
    Ok(())
}

fn crossval(settings: &mut Settings) -> Result<(), CliError> {
    let pipelines = settings
        .list("pipelines")
        .iter()
        .map(|p| parse_pipeline(p))
        .collect::<Result<Vec<_>, _>>()?;
    if pipelines.is_empty() {
        return Err(CliError::Usage("no pipelines given".into()));
    }
    let protocol: String = settings.get("protocol")?;
    let cfg = training_config(settings)?;
    let dir = run_dir(settings)?;
    let manifest = load_manifest(settings.get::<String>("manifest")?)?;
    let subjects = manifest.subjects();
    let plan: FoldPlan = match protocol.as_str() {
        "kfold" => make_kfold_by_subject(&subjects, settings.get("folds")?, settings.get("group_size")?)?,
        "loso" => make_loso(&subjects)?,
        other => return Err(CliError::Usage(format!("unknown protocol `{other}`"))),
    };
    log_settings(&dir, settings)?;
    write(dir.join("plan.txt"), plan.to_text())?;
    let mut io_error = None;
    let run = run_crossval(&manifest, &plan, &pipelines, &cfg, |fold| {
        let fold_dir = dir.join(format!("fold{}", fold.index));
        let mut line = format!("fold {}:", fold.index);
        let result = fs::create_dir_all(&fold_dir).map_err(|e| CliError::io(&fold_dir, e)).and_then(|_| {
            for (column, m) in &fold.columns {
                write!(line, " {column} {:.3}", m.accuracy()).unwrap();
                write(fold_dir.join(format!("{column}.csv")), m.to_csv())?;
            }
            for (name, metrics) in &fold.metrics {
                write(fold_dir.join(format!("{}.metrics.csv", name.replace(':', "-"))), metrics_csv(metrics))?;
            }
            Ok(())
        });
        if let Err(e) = result {
            io_error.get_or_insert(e);
        }
        println!("{line}");
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let report = report(&run)?;
    write(dir.join("report.txt"), report.to_text())?;
    write(dir.join("report.csv"), report.to_csv())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cross_dataset(settings: &mut Settings) -> Result<(), CliError> {
    let dir = run_dir(settings)?;
    log_settings(&dir, settings)?;
    let (_, nets) = load_checkpoints(settings)?;
    let manifest = load_manifest(settings.get::<String>("manifest")?)?;
    let target = TrainingSet::all(&manifest, enhancement_of(&nets)?)?;
    let r = cross_dataset_eval(&nets, &target)?;
    write(dir.join("report.txt"), r.to_text())?;
    write(dir.join("confusion.csv"), r.evaluation.matrix.to_csv())?;
    print!("{}", r.to_text());
    Ok(())
}

fn predict(settings: &mut Settings) -> Result<(), CliError> {
    let dir = run_dir(settings)?;
    log_settings(&dir, settings)?;
    let (_, nets) = load_checkpoints(settings)?;
    let crop = read_pgm(settings.get::<String>("image")?)?;
    let input = input_for_network(&nets[0], &crop)?;
    let p = predict_ensemble(&nets, &input)?;
    write(dir.join("prediction.txt"), p.to_text())?;
    print!("{}", p.to_text());
    Ok(())
}

fn gradcam(settings: &mut Settings) -> Result<(), CliError> {
    let alpha: f64 = settings.get("alpha")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CliError::Usage(format!("alpha {alpha} outside [0, 1]")));
    }
    let (paths, nets) = load_checkpoints(settings)?;
    let crop = read_pgm(settings.get::<String>("image")?)?;
    let input = input_for_network(&nets[0], &crop)?;
    let class = match settings.raw("class") {
        Some(name) => name.parse::<Expression>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => predict_ensemble(&nets, &input)?.name,
    };
    settings.set("class", class);
    let dir = run_dir(settings)?;
    log_settings(&dir, settings)?;
    let mut maps = Vec::new();
    for (path, net) in paths.iter().zip(&nets) {
        let c = net
            .spec
            .classes
            .iter()
            .position(|&e| e == class)
            .ok_or_else(|| CliError::Usage(format!("{path} does not predict {class}")))?;
        let map = gradcam_map(net, &input_for_network(net, &crop)?, c)?;
        let stem = file_stem(path);
        let up = map.normalized().upsample(crop.width, crop.height)?;
        write_pgm(dir.join(format!("{stem}.heatmap.pgm")), &up.to_gray())?;
        write_ppm(dir.join(format!("{stem}.overlay.ppm")), &overlay(&map, &crop, alpha)?)?;
        maps.push(map);
    }
    let union = union_maps(&maps)?;
    write_pgm(dir.join("union.heatmap.pgm"), &union.upsample(crop.width, crop.height)?.to_gray())?;
    write_ppm(dir.join("union.overlay.ppm"), &overlay(&union, &crop, alpha)?)?;
    let meta = format!(
        "class = {class}\nmaps = {}\nnormalization = per-map max\nunion = element-wise max of normalized maps\nalpha = {alpha}\n",
        maps.len()
    );
    write(dir.join("gradcam.txt"), &meta)?;
    println!("wrote {} overlays and a union overlay for {class} to {}", maps.len(), dir.display());
    Ok(())
}

fn profile(settings: &mut Settings) -> Result<(), CliError> {
    let trials: usize = settings.get("trials")?;
    let warmup: usize = settings.get("warmup")?;
    let seed: u64 = settings.get("seed")?;
    let dir = run_dir(settings)?;
    log_settings(&dir, settings)?;
    let (paths, nets) = load_checkpoints(settings)?;
    let report = profile_inference(&nets, trials, warmup, seed)?.with_files(&paths)?;
    let mut s = String::new();
    writeln!(
        s,
        "{:<24} {:>10} {:>10} {:>10} {:>12} {:>14} {:>12} {:>10} {:>10}",
        "model", "extractor", "classify", "stored", "inference", "flops", "head_flops", "bytes", "median_ms"
    )
    .unwrap();
    let mut total = 0;
    for (i, net) in nets.iter().enumerate() {
        let c = count_params(&net.spec);
        let stored = net.param_count();
        total += c.inference();
        writeln!(
            s,
            "{:<24} {:>10} {:>10} {:>10} {:>12} {:>14} {:>12} {:>10} {:>10.3}",
            file_stem(&paths[i]),
            c.extractor,
            c.classification,
            stored,
            c.inference(),
            count_flops(&net.spec, FlopConvention::FullNetwork),
            count_flops(&net.spec, FlopConvention::DenseHeads),
            report.file_sizes[i].1,
            report.per_model[i].median_ms
        )
        .unwrap();
    }
    writeln!(s, "ensemble_inference_params = {total}").unwrap();
    writeln!(s, "serial_median_ms = {:.3}", report.serial.median_ms).unwrap();
    writeln!(s, "serial_mean_ms = {:.3}", report.serial.mean_ms).unwrap();
    writeln!(s, "trials = {}", report.trials).unwrap();
    write(dir.join("profile.txt"), &s)?;
    print!("{s}");
    Ok(())
}
