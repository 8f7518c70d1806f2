//! Parametric synthetic faces with known landmarks.
//!
//! Each subject gets a base geometry (per-part scale and face placement,
//! ±`variation`), each expression moves landmarks by a fixed template, and
//! every image adds Gaussian landmark jitter and a small placement shift.
//! Faces are drawn as anti-aliased strokes through the 68 points plus a
//! blob at each point, bright on a dark background.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::expression::Expression;
use crate::landmarks::{Feature, Point, NUM_LANDMARKS};
use crate::preprocess::GrayImage;

use super::manifest::{Manifest, Sample};
use super::netpbm::write_pgm;

pub const BACKGROUND: u8 = 40;
/// Overall scale of the expression templates.
const EXPRESSION_GAIN: f32 = 1.6;
const STROKE: f32 = 200.0;
const BLOB: f32 = 255.0;
const NOISE: i32 = 4;
/// Placement shifts keep landmarks at least this far (unit coordinates)
/// inside the crop.
const MARGIN: f32 = 0.03;

/// Polylines drawn between consecutive landmarks; `true` closes the loop.
const STROKES: [(usize, usize, bool); 9] = [
    (0, 17, false),
    (17, 22, false),
    (22, 27, false),
    (27, 31, false),
    (31, 36, false),
    (36, 42, true),
    (42, 48, true),
    (48, 60, true),
    (60, 68, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub per_subject: usize,
    pub seed: u64,
    pub size: usize,
    /// Landmark jitter standard deviation in pixels at 160 px.
    pub jitter_px: f32,
    /// Relative subject geometry variation.
    pub variation: f32,
    /// Per-image placement shift, fraction of the crop; clamped so the face
    /// stays inside the crop.
    pub shift: f32,
    /// Expression intensity range.
    pub intensity: (f32, f32),
    /// Face size relative to the crop.
    pub face_size: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 12,
            per_subject: 21,
            seed: 7,
            size: 160,
            jitter_px: 2.0,
            variation: 0.10,
            shift: 0.18,
            intensity: (0.9, 1.1),
            face_size: 0.75,
        }
    }
}

fn mirror(p: Point) -> Point {
    [1.0 - p[0], p[1]]
}

/// Neutral landmarks in unit crop coordinates, exactly left/right symmetric.
pub fn neutral_template() -> Vec<Point> {
    let mut p = vec![[0.0f32; 2]; NUM_LANDMARKS];
    for (i, pt) in p.iter_mut().enumerate().take(17) {
        let t = std::f32::consts::PI * (1.0 - i as f32 / 16.0);
        *pt = [0.5 + 0.34 * t.cos(), 0.40 + 0.42 * t.sin()];
    }
    p[8][0] = 0.5;
    for i in 0..5 {
        let t = i as f32 / 4.0;
        p[17 + i] = [0.22 + 0.21 * t, 0.30 - 0.035 * (std::f32::consts::PI * t).sin()];
        p[26 - i] = mirror(p[17 + i]);
    }
    for (k, y) in [0.36, 0.42, 0.48, 0.54].into_iter().enumerate() {
        p[27 + k] = [0.5, y];
    }
    p[31] = [0.43, 0.595];
    p[32] = [0.465, 0.605];
    p[33] = [0.5, 0.615];
    p[34] = mirror(p[32]);
    p[35] = mirror(p[31]);
    let (cx, cy) = (0.35, 0.39);
    p[36] = [cx - 0.06, cy];
    p[37] = [cx - 0.02, cy - 0.025];
    p[38] = [cx + 0.02, cy - 0.025];
    p[39] = [cx + 0.06, cy];
    p[40] = [cx + 0.02, cy + 0.025];
    p[41] = [cx - 0.02, cy + 0.025];
    for (r, l) in [(42, 39), (43, 38), (44, 37), (45, 36), (46, 41), (47, 40)] {
        p[r] = mirror(p[l]);
    }
    p[48] = [0.38, 0.72];
    p[49] = [0.42, 0.697];
    p[50] = [0.46, 0.687];
    p[51] = [0.5, 0.692];
    p[57] = [0.5, 0.768];
    p[58] = [0.455, 0.762];
    p[59] = [0.415, 0.746];
    p[60] = [0.40, 0.72];
    p[61] = [0.45, 0.711];
    p[62] = [0.5, 0.713];
    p[66] = [0.5, 0.729];
    p[67] = [0.45, 0.728];
    for (r, l) in [(52, 50), (53, 49), (54, 48), (55, 59), (56, 58), (63, 61), (64, 60), (65, 67)] {
        p[r] = mirror(p[l]);
    }
    p
}

/// Landmark displacements (unit coordinates) for an expression at
/// intensity 1. Left-side displacements are mirrored onto the right side.
pub fn expression_offsets(expr: Expression) -> Vec<Point> {
    let mut d = vec![[0.0f32; 2]; NUM_LANDMARKS];
    let sym = crate::landmarks::symmetry_permutation();
    let mut set = |i: usize, dx: f32, dy: f32| {
        let (dx, dy) = (dx * EXPRESSION_GAIN, dy * EXPRESSION_GAIN);
        d[i] = [dx, dy];
        let j = sym[i];
        if j != i {
            d[j] = [-dx, dy];
        }
    };
    match expr {
        Expression::Neutral | Expression::Contempt => {}
        Expression::Happy => {
            set(48, -0.04, -0.045);
            set(60, -0.03, -0.035);
            set(49, -0.01, -0.02);
            set(59, -0.015, -0.01);
            set(58, 0.0, 0.01);
            set(57, 0.0, 0.012);
            set(61, 0.0, -0.01);
            set(67, 0.0, 0.005);
            set(66, 0.0, 0.008);
            set(40, 0.0, -0.012);
            set(41, 0.0, -0.012);
            for i in 2..5 {
                set(i, -0.012, -0.01);
            }
        }
        Expression::Sad => {
            set(48, 0.012, 0.045);
            set(60, 0.01, 0.035);
            set(59, 0.0, 0.015);
            set(57, 0.0, -0.01);
            set(51, 0.0, 0.008);
            set(21, 0.0, -0.045);
            set(20, 0.0, -0.025);
            set(17, 0.0, 0.02);
            set(18, 0.0, 0.01);
            set(37, 0.0, 0.01);
            set(38, 0.0, 0.012);
        }
        Expression::Surprise => {
            for i in 17..22 {
                set(i, 0.0, -0.055);
            }
            set(37, 0.0, -0.02);
            set(38, 0.0, -0.02);
            set(57, 0.0, 0.09);
            set(58, 0.0, 0.085);
            set(59, 0.005, 0.05);
            set(66, 0.0, 0.08);
            set(67, 0.0, 0.075);
            set(48, 0.02, 0.03);
            set(60, 0.02, 0.03);
            set(49, 0.005, -0.005);
            set(8, 0.0, 0.04);
            for i in 5..8 {
                set(i, 0.0, 0.008 * (i as f32 - 3.0));
            }
        }
        Expression::Angry => {
            set(21, 0.025, 0.06);
            set(20, 0.015, 0.05);
            set(19, 0.0, 0.03);
            set(18, 0.0, 0.01);
            set(37, 0.0, 0.018);
            set(38, 0.0, 0.02);
            set(48, 0.035, 0.0);
            set(60, 0.03, 0.0);
            set(49, 0.02, 0.01);
            set(51, 0.0, 0.012);
            set(57, 0.0, -0.02);
            set(58, 0.012, -0.016);
            set(66, 0.0, -0.008);
            set(31, -0.012, 0.0);
        }
        Expression::Fear => {
            for i in 17..20 {
                set(i, 0.0, -0.03);
            }
            set(20, 0.012, -0.04);
            set(21, 0.02, -0.045);
            set(37, 0.0, -0.022);
            set(38, 0.0, -0.022);
            set(48, -0.05, 0.018);
            set(60, -0.045, 0.015);
            set(59, -0.02, 0.03);
            set(58, 0.0, 0.035);
            set(57, 0.0, 0.035);
            set(67, 0.0, 0.028);
            set(66, 0.0, 0.03);
            set(8, 0.0, 0.02);
        }
        Expression::Disgust => {
            for i in 49..52 {
                set(i, 0.0, -0.035);
            }
            set(61, 0.0, -0.03);
            set(62, 0.0, -0.03);
            set(48, 0.0, 0.012);
            set(31, -0.012, -0.022);
            set(32, -0.006, -0.02);
            set(33, 0.0, -0.018);
            set(30, 0.0, -0.012);
            set(29, 0.0, -0.006);
            for i in 17..22 {
                set(i, 0.0, 0.022);
            }
            set(40, 0.0, -0.015);
            set(41, 0.0, -0.015);
        }
    }
    d
}

/// Subject-specific geometry applied on top of the template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    /// (x, y) scale per part, about the midline and the part's mean height.
    pub part_scale: [[f32; 2]; 5],
    /// Whole-face scale about the crop center.
    pub face_scale: [f32; 2],
    pub offset: Point,
}

impl FaceGeometry {
    pub fn neutral() -> Self {
        Self {
            part_scale: [[1.0; 2]; 5],
            face_scale: [1.0; 2],
            offset: [0.0; 2],
        }
    }

    pub fn sample(rng: &mut impl Rng, variation: f32) -> Self {
        let v = variation;
        let mut g = Self::neutral();
        if v > 0.0 {
            for s in &mut g.part_scale {
                *s = [1.0 + rng.gen_range(-v..=v), 1.0 + rng.gen_range(-v..=v)];
            }
            g.face_scale = [1.0 + rng.gen_range(-v..=v) * 0.5, 1.0 + rng.gen_range(-v..=v) * 0.5];
            g.offset = [rng.gen_range(-v..=v) * 0.3, rng.gen_range(-v..=v) * 0.3];
        }
        g
    }

    /// Applies the geometry to unit-coordinate points.
    pub fn apply(&self, pts: &[Point]) -> Vec<Point> {
        let mut out = pts.to_vec();
        for (f, s) in Feature::ALL.iter().zip(&self.part_scale) {
            let range = f.indices();
            let cy = range.clone().map(|i| pts[i][1]).sum::<f32>() / range.len() as f32;
            for i in range {
                out[i] = [0.5 + (pts[i][0] - 0.5) * s[0], cy + (pts[i][1] - cy) * s[1]];
            }
        }
        for p in &mut out {
            p[0] = 0.5 + (p[0] - 0.5) * self.face_scale[0] + self.offset[0];
            p[1] = 0.5 + (p[1] - 0.5) * self.face_scale[1] + self.offset[1];
        }
        out
    }
}

/// Noise-free unit-coordinate landmarks for one face.
pub fn face_landmarks(geometry: &FaceGeometry, expr: Expression, intensity: f32) -> Vec<Point> {
    let base = neutral_template();
    let off = expression_offsets(expr);
    let pts: Vec<Point> = base
        .iter()
        .zip(&off)
        .map(|(b, d)| [b[0] + intensity * d[0], b[1] + intensity * d[1]])
        .collect();
    geometry.apply(&pts)
}

fn segment_distance(p: Point, a: Point, b: Point) -> f32 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (p[0] - a[0] - t * dx, p[1] - a[1] - t * dy);
    (ex * ex + ey * ey).sqrt()
}

/// Renders a face from pixel-coordinate landmarks. `noise_seed` adds
/// uniform ±4 gray-level noise; `None` renders clean.
pub fn render_face(landmarks: &[Point], size: usize, noise_seed: Option<u64>) -> GrayImage {
    let scale = size as f32 / 160.0;
    let half_width = 0.9 * scale;
    let blob_radius = 1.8 * scale;
    let mut level = vec![0.0f32; size * size];
    let mut splat = |a: Point, b: Point, radius: f32, peak: f32| {
        let pad = radius + 1.0;
        let x0 = (a[0].min(b[0]) - pad).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - pad).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + pad).ceil().max(0.0) as usize).min(size);
        let y1 = ((a[1].max(b[1]) + pad).ceil().max(0.0) as usize).min(size);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = segment_distance([x as f32 + 0.5, y as f32 + 0.5], a, b);
                let cov = (radius + 0.5 - d).clamp(0.0, 1.0);
                let v = cov * (peak - BACKGROUND as f32);
                let cell = &mut level[y * size + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    };
    for &(start, end, closed) in &STROKES {
        for i in start..end - 1 {
            splat(landmarks[i], landmarks[i + 1], half_width, STROKE);
        }
        if closed {
            splat(landmarks[end - 1], landmarks[start], half_width, STROKE);
        }
    }
    for &p in landmarks {
        splat(p, p, blob_radius, BLOB);
    }
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    let pixels = level
        .iter()
        .map(|&v| {
            let n = rng.as_mut().map_or(0, |r| r.gen_range(-NOISE..=NOISE));
            (BACKGROUND as f32 + v + n as f32).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(size, size, pixels).expect("size matches")
}

/// Classifies pixel landmarks by the nearest class template after removing
/// translation and scale.
pub fn nearest_template(landmarks: &[Point], classes: &[Expression]) -> Expression {
    fn normalized(p: &[Point]) -> Vec<f32> {
        let n = p.len() as f32;
        let cx = p.iter().map(|q| q[0]).sum::<f32>() / n;
        let cy = p.iter().map(|q| q[1]).sum::<f32>() / n;
        let rms = (p.iter().map(|q| (q[0] - cx).powi(2) + (q[1] - cy).powi(2)).sum::<f32>() / n).sqrt();
        p.iter().flat_map(|q| [(q[0] - cx) / rms, (q[1] - cy) / rms]).collect()
    }
    let target = normalized(landmarks);
    let geometry = FaceGeometry::neutral();
    classes
        .iter()
        .map(|&c| {
            let t = normalized(&face_landmarks(&geometry, c, 1.0));
            let d: f32 = t.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            (c, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, _)| c)
        .expect("non-empty class list")
}

/// Writes `images/*.pgm` and `manifest.txt` under `out_dir`.
pub fn generate_synthetic(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if config.n_subjects < 2 {
        return Err(Error::InvalidArgument("synthetic data needs at least 2 subjects".into()));
    }
    if config.size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("images"))?;
    let classes = Expression::SEVEN.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jitter = Normal::new(0.0f32, config.jitter_px * config.size as f32 / 160.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let size = config.size as f32;
    let mut manifest = Manifest::new(classes.clone(), out_dir);
    for s in 0..config.n_subjects {
        let subject = format!("s{:02}", s + 1);
        let geometry = FaceGeometry::sample(&mut rng, config.variation);
        for k in 0..config.per_subject {
            let expr = classes[k % classes.len()];
            let (lo, hi) = config.intensity;
            let intensity = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let face: Vec<Point> = face_landmarks(&geometry, expr, intensity)
                .into_iter()
                .map(|p| p.map(|v| 0.5 + (v - 0.5) * config.face_size))
                .collect();
            let shift = [0, 1].map(|axis| {
                let s = rng.gen_range(-1.0..=1.0) * config.shift;
                let lo = face.iter().map(|p| p[axis]).fold(f32::INFINITY, f32::min);
                let hi = face.iter().map(|p| p[axis]).fold(f32::NEG_INFINITY, f32::max);
                s.clamp((MARGIN - lo).min(0.0), (1.0 - MARGIN - hi).max(0.0))
            });
            let landmarks: Vec<Point> = face
                .into_iter()
                .map(|p| {
                    [
                        (p[0] + shift[0]) * size + jitter.sample(&mut rng),
                        (p[1] + shift[1]) * size + jitter.sample(&mut rng),
                    ]
                })
                .collect();
            let image = render_face(&landmarks, config.size, Some(rng.gen()));
            let rel = PathBuf::from(format!("images/{subject}_{k:03}.pgm"));
            write_pgm(out_dir.join(&rel), &image)?;
            manifest.samples.push(Sample {
                image_path: rel,
                subject_id: subject.clone(),
                expression: expr,
                landmarks,
            });
        }
    }
    manifest.save(out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::symmetry_permutation;

    #[test]
    fn neutral_template_is_symmetric() {
        let p = neutral_template();
        let sym = symmetry_permutation();
        for i in 0..NUM_LANDMARKS {
            let q = p[sym[i]];
            assert!((p[i][0] - (1.0 - q[0])).abs() < 1e-6, "x of {i}");
            assert!((p[i][1] - q[1]).abs() < 1e-6, "y of {i}");
        }
    }

    #[test]
    fn offsets_are_symmetric() {
        let sym = symmetry_permutation();
        for e in Expression::SEVEN {
            let d = expression_offsets(e);
            for i in 0..NUM_LANDMARKS {
                assert_eq!(d[i][0], -d[sym[i]][0], "{e} {i}");
                assert_eq!(d[i][1], d[sym[i]][1], "{e} {i}");
            }
        }
    }

    #[test]
    fn clean_render_draws_blobs() {
        let pts: Vec<Point> = neutral_template().iter().map(|p| [p[0] * 160.0, p[1] * 160.0]).collect();
        let img = render_face(&pts, 160, None);
        let p = pts[30];
        assert_eq!(img.get(p[0] as usize, p[1] as usize), 255);
        assert_eq!(img.get(2, 2), BACKGROUND);
    }
}
