mod common;

use std::collections::BTreeSet;

use oralfuse::dataset::{
    apportion, stratified_split, ClassTaxonomy, Grouping, LabeledExample, LesionClass, SplitManifest, SplitRatios,
    Subset,
};
use proptest::prelude::*;

fn dataset(sizes: &[usize]) -> (ClassTaxonomy, Vec<LabeledExample>) {
    let classes = LesionClass::ALL[..sizes.len()].to_vec();
    let tax = ClassTaxonomy::new("t", classes.clone()).unwrap();
    let examples = classes.iter().zip(sizes).flat_map(|(&c, &n)| common::originals(c, n)).collect();
    (tax, examples)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_and_stratification(sizes in prop::collection::vec(3usize..400, 2..=4), seed in any::<u64>()) {
        let (tax, examples) = dataset(&sizes);
        let ratios = SplitRatios::default();
        let m = stratified_split(&examples, &tax, ratios, seed, Grouping::Image).unwrap();
        prop_assert_eq!(m.len(), examples.len());
        let ids: BTreeSet<_> = examples.iter().map(|e| e.id.clone()).collect();
        prop_assert!(m.assignments().keys().cloned().collect::<BTreeSet<_>>() == ids);
        let counts = m.per_class_counts();
        for (class, &n) in tax.classes().iter().zip(&sizes) {
            for (subset, r) in Subset::ALL.into_iter().zip(ratios.as_array()) {
                let got = counts[&(*class, subset)] as f64;
                prop_assert!((got - r * n as f64).abs() < 1.0);
            }
        }
        let again = stratified_split(&examples, &tax, ratios, seed, Grouping::Image).unwrap();
        prop_assert_eq!(m.to_text(), again.to_text());
        prop_assert_eq!(SplitManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn input_order_does_not_matter(sizes in prop::collection::vec(3usize..60, 2..=3), seed in any::<u64>()) {
        let (tax, mut examples) = dataset(&sizes);
        let a = stratified_split(&examples, &tax, SplitRatios::default(), seed, Grouping::Image).unwrap();
        examples.reverse();
        let b = stratified_split(&examples, &tax, SplitRatios::default(), seed, Grouping::Image).unwrap();
        prop_assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn apportion_is_exact_and_close(n in 0usize..100_000, a in 1u32..100, b in 0u32..100, c in 0u32..100) {
        let total = f64::from(a + b + c);
        let ratios = SplitRatios::new(f64::from(a) / total, f64::from(b) / total, 1.0 - f64::from(a + b) / total).unwrap();
        let counts = apportion(n, &ratios);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for (k, r) in counts.iter().zip(ratios.as_array()) {
            prop_assert!((*k as f64 - r * n as f64).abs() < 1.0 + 1e-9);
        }
    }
}

#[test]
fn patient_mode_never_splits_a_patient() {
    let mut examples = Vec::new();
    for class in [LesionClass::Opmd, LesionClass::Benign] {
        for p in 0..30 {
            for k in 0..(1 + p % 3) {
                let patient = format!("{}{p}", class.folder_name());
                let mut e = common::originals(class, 1).remove(0);
                e.id = oralfuse::dataset::example_id_for(class, &format!("{patient}_{k}.png"));
                e.patient_id = patient;
                examples.push(e);
            }
        }
    }
    let tax = ClassTaxonomy::two_class();
    let m = stratified_split(&examples, &tax, SplitRatios::default(), 5, Grouping::Patient).unwrap();
    let mut seen = std::collections::BTreeMap::new();
    for e in &examples {
        let s = m.subset_of(&e.id).unwrap();
        assert_eq!(*seen.entry(e.patient_id.clone()).or_insert(s), s, "patient {} split", e.patient_id);
    }
}
