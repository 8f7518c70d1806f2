use petl::data::synth::{nearest_template, BACKGROUND};
use petl::data::{generate_synthetic, load_manifest, SynthConfig};
use petl::preprocess::GrayImage;

fn disc_mean(img: &GrayImage, cx: f32, cy: f32, r: f32) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..img.height {
        for x in 0..img.width {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                sum += img.get(x, y) as f64;
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

#[test]
fn landmarks_lie_on_rendered_strokes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_subjects: 3, per_subject: 7, ..SynthConfig::default() };
    let m = generate_synthetic(&cfg, dir.path()).unwrap();
    for s in &m.samples {
        let img = m.load_image(s).unwrap();
        for (i, p) in s.landmarks.iter().enumerate() {
            let mean = disc_mean(&img, p[0], p[1], 2.0);
            assert!(mean > BACKGROUND as f64 + 30.0, "{:?} landmark {i}: {mean}", s.image_path);
        }
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig { n_subjects: 2, per_subject: 7, seed: 3, ..SynthConfig::default() };
    let ma = generate_synthetic(&cfg, a.path()).unwrap();
    generate_synthetic(&cfg, b.path()).unwrap();
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "manifest.txt"), read(b.path(), "manifest.txt"));
    for s in &ma.samples {
        let f = s.image_path.to_str().unwrap();
        assert_eq!(read(a.path(), f), read(b.path(), f));
    }
}

#[test]
fn nearest_template_recovers_every_label() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&SynthConfig::default(), dir.path()).unwrap();
    assert_eq!(m.samples.len(), 12 * 21);
    let wrong: Vec<_> = m
        .samples
        .iter()
        .filter(|s| nearest_template(&s.landmarks, &m.classes) != s.expression)
        .map(|s| (s.image_path.clone(), s.expression))
        .collect();
    assert!(wrong.is_empty(), "{wrong:?}");
}

#[test]
fn manifest_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_subjects: 2, per_subject: 3, ..SynthConfig::default() };
    generate_synthetic(&cfg, dir.path()).unwrap();
    let path = dir.path().join("manifest.txt");
    let m = load_manifest(&path).unwrap();
    let copy = dir.path().join("copy.txt");
    m.save(&copy).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());
}

#[test]
fn needs_two_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_subjects: 1, ..SynthConfig::default() };
    assert!(generate_synthetic(&cfg, dir.path()).is_err());
}
