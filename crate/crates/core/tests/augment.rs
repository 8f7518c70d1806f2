use petl::augment::{apply_affine, transform_landmarks, AffineSpec, AugmentConfig};
use petl::data::synth::{face_landmarks, render_face, FaceGeometry, BACKGROUND};
use petl::landmarks::{symmetry_permutation, Point};
use petl::preprocess::gray_to_tensor;
use petl::{Expression, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pixel_face(geometry: &FaceGeometry, expr: Expression) -> Vec<Point> {
    face_landmarks(geometry, expr, 1.0).iter().map(|p| [p[0] * 160.0, p[1] * 160.0]).collect()
}

#[test]
fn flip_of_symmetric_face_is_index_permutation() {
    let pts = pixel_face(&FaceGeometry::neutral(), Expression::Happy);
    let spec = AffineSpec { flip: true, ..AffineSpec::identity() };
    let flipped = transform_landmarks(&pts, &spec, 160, 160);
    for (i, (a, b)) in pts.iter().zip(&flipped).enumerate() {
        assert!((a[0] - b[0]).abs() < 0.5 && (a[1] - b[1]).abs() < 0.5, "landmark {i}: {a:?} vs {b:?}");
    }
    // without the index remap the left/right points would swap sides
    let sym = symmetry_permutation();
    assert_ne!(sym[36], 36);
    assert!((flipped[36][0] - pts[36][0]).abs() < 0.5);
}

#[test]
fn flipped_image_matches_mirrored_render() {
    let pts = pixel_face(&FaceGeometry::neutral(), Expression::Surprise);
    let img: Tensor<f64> = gray_to_tensor(&render_face(&pts, 160, None));
    let spec = AffineSpec { flip: true, ..AffineSpec::identity() };
    let (out, _, _) = apply_affine(&img, &pts, &spec).unwrap();
    for y in 0..160 {
        for x in 0..160 {
            assert_eq!(out.data()[y * 160 + x], img.data()[y * 160 + 159 - x]);
        }
    }
}

fn max_near(img: &Tensor<f32>, p: Point, r: f32) -> f32 {
    let mut best = 0.0f32;
    for y in 0..160 {
        for x in 0..160 {
            let (dx, dy) = (x as f32 + 0.5 - p[0], y as f32 + 0.5 - p[1]);
            if dx * dx + dy * dy <= r * r {
                best = best.max(img.data()[y * 160 + x]);
            }
        }
    }
    best
}

#[test]
fn transformed_landmarks_stay_on_rendered_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = AugmentConfig::default();
    let mut checked = 0;
    for k in 0..12 {
        let geometry = FaceGeometry::sample(&mut rng, 0.1);
        let pts = pixel_face(&geometry, Expression::SEVEN[k % 7]);
        let img: Tensor<f32> = gray_to_tensor(&render_face(&pts, 160, None));
        let spec = cfg.sample(&mut rng);
        let (out, moved, outcome) = apply_affine(&img, &pts, &spec).unwrap();
        if outcome.fell_back {
            continue;
        }
        checked += 1;
        for (i, p) in moved.iter().enumerate() {
            let v = max_near(&out, *p, 1.0);
            assert!(v > BACKGROUND as f32 + 100.0, "spec {spec:?} landmark {i} at {p:?}: {v}");
        }
    }
    assert!(checked >= 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_inverse_composition(deg in -15.0f64..15.0, x in 0.0f32..160.0, y in 0.0f32..160.0) {
        let spec = |d| AffineSpec { rotation_deg: d, ..AffineSpec::identity() };
        let there = transform_landmarks(&[[x, y]], &spec(deg), 160, 160);
        let back = transform_landmarks(&there, &spec(-deg), 160, 160);
        prop_assert!((back[0][0] - x).abs() < 0.1 && (back[0][1] - y).abs() < 0.1);
    }

    #[test]
    fn augmentation_is_deterministic(seed in any::<u64>()) {
        let cfg = AugmentConfig::default();
        let pts = pixel_face(&FaceGeometry::neutral(), Expression::Fear);
        let img: Tensor<f32> = gray_to_tensor(&render_face(&pts, 160, None));
        let run = || {
            let spec = cfg.sample(&mut ChaCha8Rng::seed_from_u64(seed));
            apply_affine(&img, &pts, &spec).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}
