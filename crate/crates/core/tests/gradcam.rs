use proptest::prelude::*;

use petl::gradcam::{gradcam_map, overlay, union_maps, Heatmap, OVERLAY_ALPHA};
use petl::preprocess::GrayImage;
use petl::{Expression, Feature, Network, NetworkKind, NetworkSpec, Tensor};

fn map(values: Vec<f64>) -> Heatmap {
    Heatmap::new(3, 2, values).unwrap()
}

fn heatmap() -> impl Strategy<Value = Heatmap> {
    prop::collection::vec(0.0f64..10.0, 6).prop_map(map)
}

proptest! {
    #[test]
    fn union_is_commutative(a in heatmap(), b in heatmap()) {
        prop_assert_eq!(union_maps(&[a.clone(), b.clone()]).unwrap(), union_maps(&[b, a]).unwrap());
    }

    #[test]
    fn union_is_idempotent(a in heatmap()) {
        prop_assert_eq!(union_maps(&[a.clone(), a.clone()]).unwrap(), union_maps(&[a]).unwrap());
    }

    #[test]
    fn union_dominates_each_map(maps in prop::collection::vec(heatmap(), 5)) {
        let u = union_maps(&maps).unwrap();
        for m in &maps {
            let n = m.normalized();
            for (x, y) in u.values.iter().zip(&n.values) {
                prop_assert!(x >= y);
            }
        }
    }
}

#[test]
fn logit_shift_leaves_map_unchanged() {
    let spec = NetworkSpec::new(NetworkKind::Part(Feature::Mouth), Expression::SEVEN.to_vec())
        .unwrap()
        .with_input_size(32)
        .unwrap();
    let net = Network::<f64>::build(spec, 4).unwrap();
    let mut shifted = net.clone();
    let last = shifted.classification.layers.len() - 1;
    if let petl::layers::Layer::Dense(d) = &mut shifted.classification.layers[last] {
        d.bias.data_mut().iter_mut().for_each(|b| *b += 3.0);
    }
    let x = Tensor::new(&[32, 32, 3], (0..32 * 32 * 3).map(|i| ((i * 37) % 255) as f64 / 127.5 - 1.0).collect())
        .unwrap();
    for class in 0..7 {
        assert_eq!(gradcam_map(&net, &x, class).unwrap(), gradcam_map(&shifted, &x, class).unwrap());
    }
}

#[test]
fn class_out_of_range_is_rejected() {
    let spec = NetworkSpec::new(NetworkKind::Baseline, Expression::SEVEN.to_vec())
        .unwrap()
        .with_input_size(16)
        .unwrap();
    let net = Network::<f32>::build(spec, 1).unwrap();
    assert!(gradcam_map(&net, &Tensor::zeros(&[16, 16, 3]), 7).is_err());
}

#[test]
fn overlay_blends_toward_jet() {
    let crop = GrayImage::filled(160, 160, 100);
    let hot = Heatmap::new(2, 2, vec![1.0; 4]).unwrap();
    let img = overlay(&hot, &crop, OVERLAY_ALPHA).unwrap();
    assert_eq!((img.width, img.height), (160, 160));
    // Full heat maps to red at the top of the ramp.
    let px = &img.pixels[..3];
    assert!(px[0] > px[2], "{px:?}");
}
