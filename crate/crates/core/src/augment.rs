//! Joint geometric augmentation of face crops and their landmarks.
//!
//! The transform is `p' = A·(flip(p) − c) + c + t` with `c` the crop
//! center, `A = rotation · shear` and `t` the translation in pixels. Image
//! pixels are resampled bilinearly from the inverse map with edge
//! replication, so a point drawn at `p` appears at `p'`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::landmarks::{symmetry_permutation, Point};
use crate::preprocess::LANDMARK_TOLERANCE_PX;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const MAX_SHEAR_DEG: f64 = 10.0;
pub const MAX_TRANSLATE_FRAC: f64 = 0.1;
pub const MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineSpec {
    pub flip: bool,
    pub rotation_deg: f64,
    pub shear_deg: f64,
    /// Translation as a fraction of crop width and height.
    pub translate_frac: (f64, f64),
}

impl AffineSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let (dx, dy) = self.translate_frac;
        let ok = self.rotation_deg.abs() <= MAX_ROTATION_DEG
            && self.shear_deg.abs() <= MAX_SHEAR_DEG
            && dx.abs() <= MAX_TRANSLATE_FRAC
            && dy.abs() <= MAX_TRANSLATE_FRAC;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("affine spec out of bounds: {self:?}")))
        }
    }

    /// Same flip, half the magnitudes.
    pub fn milder(&self) -> Self {
        Self {
            flip: self.flip,
            rotation_deg: self.rotation_deg / 2.0,
            shear_deg: self.shear_deg / 2.0,
            translate_frac: (self.translate_frac.0 / 2.0, self.translate_frac.1 / 2.0),
        }
    }
}

/// Forward point map for a crop of `width × height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    flip: bool,
    width: f64,
    center: [f64; 2],
    a: [[f64; 2]; 2],
    t: [f64; 2],
}

impl Affine {
    pub fn new(spec: &AffineSpec, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let th = spec.rotation_deg.to_radians();
        let k = spec.shear_deg.to_radians().tan();
        let (c, s) = (th.cos(), th.sin());
        // rotation · [[1, k], [0, 1]]
        let a = [[c, c * k - s], [s, s * k + c]];
        Self {
            flip: spec.flip,
            width: w,
            center: [w / 2.0, h / 2.0],
            a,
            t: [spec.translate_frac.0 * w, spec.translate_frac.1 * h],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let x = if self.flip { self.width - p[0] } else { p[0] };
        let (u, v) = (x - self.center[0], p[1] - self.center[1]);
        [
            self.a[0][0] * u + self.a[0][1] * v + self.center[0] + self.t[0],
            self.a[1][0] * u + self.a[1][1] * v + self.center[1] + self.t[1],
        ]
    }

    pub fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        let [[a, b], [c, d]] = self.a;
        let det = a * d - b * c;
        let (u, v) = (q[0] - self.center[0] - self.t[0], q[1] - self.center[1] - self.t[1]);
        let x = (d * u - b * v) / det + self.center[0];
        let y = (-c * u + a * v) / det + self.center[1];
        [if self.flip { self.width - x } else { x }, y]
    }
}

/// Transforms landmarks, remapping indices when the spec flips.
pub fn transform_landmarks(points: &[Point], spec: &AffineSpec, width: usize, height: usize) -> Vec<Point> {
    let m = Affine::new(spec, width, height);
    let moved: Vec<Point> = points
        .iter()
        .map(|&[x, y]| {
            let [u, v] = m.apply([x as f64, y as f64]);
            [u as f32, v as f32]
        })
        .collect();
    if spec.flip && moved.len() == crate::landmarks::NUM_LANDMARKS {
        let sym = symmetry_permutation();
        (0..moved.len()).map(|i| moved[sym[i]]).collect()
    } else {
        moved
    }
}

/// Resamples an `[H, W, C]` image under the spec.
pub fn warp_image<T: Scalar>(img: &Tensor<T>, spec: &AffineSpec) -> Result<Tensor<T>> {
    img.expect_rank("warp_image", 3)?;
    let (h, w, ch) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let m = Affine::new(spec, w, h);
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    let at = |x: usize, y: usize, c: usize| src[(y * w + x) * ch + c].as_f64();
    for y in 0..h {
        for x in 0..w {
            let [sx, sy] = m.invert([x as f64 + 0.5, y as f64 + 0.5]);
            let fx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            for c in 0..ch {
                let top = at(x0, y0, c) * (1.0 - ax) + at(x1, y0, c) * ax;
                let bottom = at(x0, y1, c) * (1.0 - ax) + at(x1, y1, c) * ax;
                out.push(T::from_f64_lossy(top * (1.0 - ay) + bottom * ay));
            }
        }
    }
    Tensor::new(img.shape(), out)
}

fn outside_by(points: &[Point], width: usize, height: usize) -> f32 {
    let (w, h) = (width as f32, height as f32);
    points
        .iter()
        .map(|&[x, y]| (-x).max(x - w).max(-y).max(y - h))
        .fold(f32::NEG_INFINITY, f32::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOutcome {
    /// The spec actually applied (identity if every attempt failed).
    pub applied: AffineSpec,
    pub retries: usize,
    pub fell_back: bool,
}

/// Warps image and landmarks together. If a landmark would land more than
/// the landmark tolerance outside the crop, the spec is halved and retried
/// up to three times before the original sample is returned unchanged.
pub fn apply_affine<T: Scalar>(
    img: &Tensor<T>,
    landmarks: &[Point],
    spec: &AffineSpec,
) -> Result<(Tensor<T>, Vec<Point>, AugmentOutcome)> {
    spec.validate()?;
    img.expect_rank("apply_affine", 3)?;
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut current = *spec;
    for retries in 0..=MAX_RETRIES {
        let pts = transform_landmarks(landmarks, &current, w, h);
        if outside_by(&pts, w, h) <= LANDMARK_TOLERANCE_PX {
            let outcome = AugmentOutcome {
                applied: current,
                retries,
                fell_back: false,
            };
            return Ok((warp_image(img, &current)?, pts, outcome));
        }
        current = current.milder();
    }
    let outcome = AugmentOutcome {
        applied: AffineSpec::identity(),
        retries: MAX_RETRIES,
        fell_back: true,
    };
    Ok((img.clone(), landmarks.to_vec(), outcome))
}

/// Sampling ranges for random specs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rotation_max: f64,
    pub shear_max: f64,
    pub translate_max: f64,
    pub flip_prob: f64,
    /// Presentations of each sample per epoch: one original plus
    /// `multiplier - 1` freshly augmented copies.
    pub multiplier: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max: MAX_ROTATION_DEG,
            shear_max: MAX_SHEAR_DEG,
            translate_max: MAX_TRANSLATE_FRAC,
            flip_prob: 0.5,
            multiplier: 4,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            multiplier: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=MAX_ROTATION_DEG).contains(&self.rotation_max)
            && (0.0..=MAX_SHEAR_DEG).contains(&self.shear_max)
            && (0.0..=MAX_TRANSLATE_FRAC).contains(&self.translate_max)
            && (0.0..=1.0).contains(&self.flip_prob)
            && self.multiplier >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("augmentation config out of bounds: {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AffineSpec {
        let mut sym = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let rotation_deg = sym(self.rotation_max);
        let shear_deg = sym(self.shear_max);
        let translate_frac = (sym(self.translate_max), sym(self.translate_max));
        AffineSpec {
            flip: rng.gen_bool(self.flip_prob),
            rotation_deg,
            shear_deg,
            translate_frac,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> Tensor<f64> {
        Tensor::new(&[4, 5, 2], (0..40).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let img = ramp();
        let pts = vec![[1.5, 2.25], [0.0, 4.0]];
        let (out, moved, o) = apply_affine(&img, &pts, &AffineSpec::identity()).unwrap();
        assert_eq!(out, img);
        assert_eq!(moved, pts);
        assert!(!o.fell_back);
    }

    #[test]
    fn inverse_round_trips() {
        let spec = AffineSpec {
            flip: true,
            rotation_deg: 12.0,
            shear_deg: -7.0,
            translate_frac: (0.05, -0.08),
        };
        let m = Affine::new(&spec, 160, 160);
        for p in [[0.0, 0.0], [33.3, 120.0], [159.0, 80.5]] {
            let q = m.invert(m.apply(p));
            assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn rotate_and_back() {
        let pts = vec![[40.0f32, 50.0], [100.0, 120.0], [80.0, 80.0]];
        let rot = |deg| AffineSpec {
            rotation_deg: deg,
            ..AffineSpec::identity()
        };
        let there = transform_landmarks(&pts, &rot(10.0), 160, 160);
        let back = transform_landmarks(&there, &rot(-10.0), 160, 160);
        for (a, b) in pts.iter().zip(&back) {
            assert!((a[0] - b[0]).abs() < 0.1 && (a[1] - b[1]).abs() < 0.1);
        }
    }

    #[test]
    fn far_outside_falls_back() {
        let img = Tensor::<f32>::zeros(&[10, 10, 1]);
        let pts = vec![[-1.9f32, 5.0]];
        let spec = AffineSpec {
            translate_frac: (-0.1, 0.0),
            ..AffineSpec::identity()
        };
        let (_, moved, o) = apply_affine(&img, &pts, &spec).unwrap();
        assert!(o.fell_back);
        assert_eq!(moved, pts);
        // milder specs rescue points only slightly outside
        let pts = vec![[-1.5f32, 5.0]];
        let (_, moved, o) = apply_affine(&img, &pts, &spec).unwrap();
        assert!(!o.fell_back);
        assert_eq!(o.retries, 1);
        assert!((moved[0][0] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn out_of_bounds_spec_rejected() {
        let spec = AffineSpec {
            rotation_deg: 20.0,
            ..AffineSpec::identity()
        };
        assert!(apply_affine(&ramp(), &[], &spec).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let cfg = AugmentConfig::default();
        let a: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(4);
            (0..50).map(|_| cfg.sample(&mut r)).collect()
        };
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for s in &a {
            assert_eq!(*s, cfg.sample(&mut r));
            s.validate().unwrap();
        }
    }
}
