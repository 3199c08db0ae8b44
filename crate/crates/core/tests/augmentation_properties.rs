mod common;

use std::collections::BTreeMap;

use oralfuse::augmentation::{
    apply_transform, expand_training_set, h_flip, oversample_minority, render_hashes, rot90, scale_to_unit,
    standardize, v_flip, AugmentationPlan, NormalizationParams, TransformKind, TransformSpec,
};
use oralfuse::dataset::{
    stratified_split, ClassTaxonomy, DatasetError, Grouping, LabeledExample, LesionClass, PixelGrid, SplitRatios,
};
use oralfuse::seed::rng_from;
use proptest::prelude::*;

fn arb_image() -> impl Strategy<Value = PixelGrid> {
    (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), (w * h * 3) as usize)
            .prop_map(move |d| PixelGrid::new(w, h, d).unwrap())
    })
}

proptest! {
    #[test]
    fn normalization_matches_formula(img in arb_image()) {
        let p = NormalizationParams::default();
        let out = standardize(&scale_to_unit(&img), &p).unwrap();
        for (i, (&x, y)) in img.data().iter().zip(&out.data).enumerate() {
            let c = i % 3;
            prop_assert!(((f64::from(x) / 255.0 - p.mean[c]) / p.std[c] - y).abs() < 1e-6);
        }
    }

    #[test]
    fn flips_are_involutions(img in arb_image()) {
        prop_assert_eq!(h_flip(&h_flip(&img)), img.clone());
        prop_assert_eq!(v_flip(&v_flip(&img)), img);
    }

    #[test]
    fn rot90_has_order_four(img in arb_image(), k in 0u32..4) {
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90(&r, k);
        }
        prop_assert_eq!(r, img);
    }

    #[test]
    fn every_transform_ends_at_224_after_crop(seed in any::<u64>(), w in 40u32..300, h in 40u32..300) {
        let mut rng = rng_from(seed);
        let img = common::random_image(&mut rng, w, h);
        let plan = AugmentationPlan::default().with_seed(seed);
        let root = oralfuse::dataset::example_id_for(LesionClass::Benign, "P1_0.png");
        let out = plan.augment(&img, &root, 0).unwrap();
        prop_assert_eq!((out.width(), out.height()), (224, 224));
    }

    #[test]
    fn coarse_dropout_area_is_bounded(seed in any::<u64>()) {
        let img = PixelGrid::filled(224, 224, [255, 255, 255]);
        let spec = TransformSpec::new(TransformKind::coarse_dropout(), 1.0);
        let out = apply_transform(&spec, &img, &mut rng_from(seed)).unwrap();
        let zeroed = out.data().chunks_exact(3).filter(|p| p == &[0, 0, 0]).count();
        prop_assert!(zeroed <= 7200);
    }
}

fn train_only(examples: &[LabeledExample], tax: &ClassTaxonomy) -> oralfuse::dataset::SplitManifest {
    stratified_split(examples, tax, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 1, Grouping::Image).unwrap()
}

#[test]
fn multiplicity_then_oversampling() {
    let tax = ClassTaxonomy::two_class();
    let mut examples = common::originals(LesionClass::Opmd, 523);
    examples.extend(common::originals(LesionClass::Benign, 976));
    let split = train_only(&examples, &tax);
    let expanded = expand_training_set(&examples, &split, &AugmentationPlan::default()).unwrap();
    let count = |set: &[LabeledExample], c| set.iter().filter(|e| e.label == c).count();
    assert_eq!(count(&expanded, LesionClass::Opmd), 3138);
    assert_eq!(count(&expanded, LesionClass::Benign), 5856);
    let over = oversample_minority(&expanded, &tax, 4200, 3).unwrap();
    assert_eq!(count(&over, LesionClass::Opmd), 4200);
    assert_eq!(count(&over, LesionClass::Benign), 5856);
    for e in &over {
        let source = over.iter().find(|s| s.id == e.id.pixel_source()).unwrap();
        assert_eq!((source.label, &source.patient_id), (e.label, &e.patient_id));
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tax = ClassTaxonomy::two_class();
    let mut examples = common::originals(LesionClass::Opmd, 6);
    examples.extend(common::originals(LesionClass::Benign, 9));
    let split = train_only(&examples, &tax);
    let plan = AugmentationPlan::default().with_seed(77);
    let expanded = expand_training_set(&examples, &split, &plan).unwrap();
    let over = oversample_minority(&expanded, &tax, 60, 5).unwrap();
    let loader = |e: &LabeledExample| -> Result<PixelGrid, DatasetError> {
        let seed = oralfuse::seed::derive_named(1, e.id.root().as_str());
        Ok(common::random_image(&mut rng_from(seed), 64, 48))
    };
    let one = render_hashes(&over, &plan, &loader, 1).unwrap();
    let eight = render_hashes(&over, &plan, &loader, 8).unwrap();
    assert_eq!(one, eight);
    let again = oversample_minority(&expand_training_set(&examples, &split, &plan).unwrap(), &tax, 60, 5).unwrap();
    assert_eq!(over, again);
    let per_dup: BTreeMap<_, _> = one.iter().filter(|(id, _)| id.as_str().contains("@d")).collect();
    for (id, hash) in per_dup {
        assert_eq!(hash, &one[&id.pixel_source()]);
    }
}
