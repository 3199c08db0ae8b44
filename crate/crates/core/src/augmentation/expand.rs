use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::{AugmentError, AugmentationPlan};
use crate::dataset::{
    ClassTaxonomy, DatasetError, ExampleId, LabeledExample, LesionClass, Origin, PixelGrid,
    SplitManifest, Subset,
};
use crate::seed::{derive_named, rng_from};

/// Default per-class floor for oversampling.
pub const OVERSAMPLE_THRESHOLD: usize = 4200;

/// Keeps every original and appends `copies_per_image` augmented copies of
/// each, so the output holds `(1 + copies) × input` examples, sorted by id.
pub fn expand_training_set(
    examples: &[LabeledExample],
    split: &SplitManifest,
    plan: &AugmentationPlan,
) -> Result<Vec<LabeledExample>, AugmentError> {
    plan.validate()?;
    let mut out = Vec::with_capacity(examples.len() * (1 + plan.copies_per_image as usize));
    for ex in examples {
        if ex.origin != Origin::Original {
            return Err(AugmentError::Contract(format!(
                "{} has origin {}, expected original",
                ex.id,
                ex.origin.as_str()
            )));
        }
        if split.subset_of(&ex.id) != Some(Subset::Train) {
            return Err(AugmentError::Contract(format!("{} is not in the training subset", ex.id)));
        }
        out.push(ex.clone());
        for copy in 0..plan.copies_per_image {
            out.push(LabeledExample {
                id: ex.id.augmented(copy),
                origin: Origin::Augmented,
                ..ex.clone()
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Tops every class below `threshold` up to exactly `threshold` with uniformly
/// drawn duplicates. Nothing is removed; classes at or above the threshold are
/// untouched.
pub fn oversample_minority(
    examples: &[LabeledExample],
    taxonomy: &ClassTaxonomy,
    threshold: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, AugmentError> {
    if threshold == 0 {
        return Err(AugmentError::Oversample("threshold must be positive".into()));
    }
    let mut by_class: BTreeMap<LesionClass, Vec<&LabeledExample>> =
        taxonomy.classes().iter().map(|&c| (c, Vec::new())).collect();
    for ex in examples {
        by_class
            .get_mut(&ex.label)
            .ok_or_else(|| AugmentError::Oversample(format!("{} has label {} outside the taxonomy", ex.id, ex.label)))?
            .push(ex);
    }

    let mut out: Vec<LabeledExample> = examples.to_vec();
    for (class, mut members) in by_class {
        if members.is_empty() {
            return Err(AugmentError::Oversample(format!("class {class} has no training examples")));
        }
        if members.len() >= threshold {
            continue;
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = rng_from(derive_named(seed, class.folder_name()));
        for k in 0..threshold - members.len() {
            let source = members[rng.random_range(0..members.len())];
            out.push(LabeledExample {
                id: source.id.duplicated(k),
                origin: Origin::Duplicated,
                ..source.clone()
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Pixels for any example given its (resized) original: augmented copies are
/// re-derived from their seed, duplicates share their source's pixels.
pub fn render_example(plan: &AugmentationPlan, base: &PixelGrid, id: &ExampleId) -> Result<PixelGrid, AugmentError> {
    match id.augmentation_copy() {
        Some(copy) => plan.augment(base, &id.root(), copy),
        None => Ok(base.clone()),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, AugmentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AugmentError::Pool(e.to_string()))
}

/// Image loader used by the rendering helpers: returns the resized original
/// for an example.
pub type BaseLoader<'a> = dyn Fn(&LabeledExample) -> Result<PixelGrid, DatasetError> + Sync + 'a;

/// Renders every example on `workers` threads and returns a content hash per id.
pub fn render_hashes(
    examples: &[LabeledExample],
    plan: &AugmentationPlan,
    load: &BaseLoader<'_>,
    workers: usize,
) -> Result<BTreeMap<ExampleId, String>, AugmentError> {
    pool(workers)?.install(|| {
        examples
            .par_iter()
            .map(|ex| {
                let base = load(ex)?;
                Ok((ex.id.clone(), render_example(plan, &base, &ex.id)?.content_hash()))
            })
            .collect()
    })
}

/// Writes each augmented example to `<dir>/<example_id>.png`. Returns the
/// number of files written.
pub fn materialize_augmented(
    examples: &[LabeledExample],
    plan: &AugmentationPlan,
    load: &BaseLoader<'_>,
    dir: &Path,
    workers: usize,
) -> Result<usize, AugmentError> {
    let targets: Vec<&LabeledExample> = examples.iter().filter(|e| e.origin == Origin::Augmented).collect();
    pool(workers)?.install(|| {
        targets.par_iter().try_for_each(|ex| -> Result<(), AugmentError> {
            let base = load(ex)?;
            let image = render_example(plan, &base, &ex.id)?;
            image.save_png(&dir.join(format!("{}.png", ex.id)))?;
            Ok(())
        })
    })?;
    Ok(targets.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{example_id_for, stratified_split, Grouping, SplitRatios};
    use std::path::PathBuf;

    fn originals(class: LesionClass, n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| {
                let file = format!("{}{i}_0.png", class.folder_name());
                LabeledExample {
                    id: example_id_for(class, &file),
                    image_path: PathBuf::from(&file),
                    patient_id: format!("{}{i}", class.folder_name()),
                    label: class,
                    origin: Origin::Original,
                }
            })
            .collect()
    }

    fn train_of(all: &[LabeledExample], tax: &ClassTaxonomy) -> (Vec<LabeledExample>, SplitManifest) {
        let m = stratified_split(all, tax, SplitRatios::default(), 1, Grouping::Image).unwrap();
        let train = all
            .iter()
            .filter(|e| m.subset_of(&e.id) == Some(Subset::Train))
            .cloned()
            .collect();
        (train, m)
    }

    #[test]
    fn expansion_multiplicity() {
        let tax = ClassTaxonomy::two_class();
        let all: Vec<_> = originals(LesionClass::Opmd, 143).into_iter().chain(originals(LesionClass::Benign, 10)).collect();
        let (train, m) = train_of(&all, &tax);
        assert_eq!(train.len(), 100 + 7);
        let out = expand_training_set(&train, &m, &AugmentationPlan::default()).unwrap();
        assert_eq!(out.len(), 6 * 107);
        assert_eq!(out.iter().filter(|e| e.origin == Origin::Augmented).count(), 5 * 107);

        let one = AugmentationPlan { copies_per_image: 1, ..Default::default() };
        let out = expand_training_set(&train[100..], &m, &one).unwrap();
        assert_eq!(out.len(), 14);
        assert!(expand_training_set(&[], &m, &one).unwrap().is_empty());
    }

    #[test]
    fn expansion_rejects_non_train_and_non_original() {
        let tax = ClassTaxonomy::two_class();
        let all: Vec<_> = originals(LesionClass::Opmd, 20).into_iter().chain(originals(LesionClass::Benign, 20)).collect();
        let (train, m) = train_of(&all, &tax);
        let held_out: Vec<_> = all.iter().filter(|e| m.subset_of(&e.id) == Some(Subset::Test)).cloned().collect();
        let plan = AugmentationPlan::default();
        assert!(matches!(expand_training_set(&held_out, &m, &plan), Err(AugmentError::Contract(_))));
        let expanded = expand_training_set(&train, &m, &plan).unwrap();
        assert!(matches!(expand_training_set(&expanded, &m, &plan), Err(AugmentError::Contract(_))));
    }

    #[test]
    fn oversampling_tops_up_minorities() {
        let tax = ClassTaxonomy::two_class();
        let mut ex = originals(LesionClass::Opmd, 30);
        ex.extend(originals(LesionClass::Benign, 12));
        let out = oversample_minority(&ex, &tax, 20, 4).unwrap();
        let count = |c| out.iter().filter(|e| e.label == c).count();
        assert_eq!(count(LesionClass::Opmd), 30);
        assert_eq!(count(LesionClass::Benign), 20);
        let dups: Vec<_> = out.iter().filter(|e| e.origin == Origin::Duplicated).collect();
        assert_eq!(dups.len(), 8);
        for d in dups {
            assert!(ex.iter().any(|e| e.id == d.id.pixel_source() && e.label == d.label));
        }
        assert_eq!(out, oversample_minority(&ex, &tax, 20, 4).unwrap());
    }

    #[test]
    fn oversampling_boundaries() {
        let tax = ClassTaxonomy::two_class();
        let mut ex = originals(LesionClass::Opmd, 20);
        ex.extend(originals(LesionClass::Benign, 25));
        let mut sorted = ex.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(oversample_minority(&ex, &tax, 20, 1).unwrap(), sorted);

        let only_opmd = originals(LesionClass::Opmd, 5);
        let err = oversample_minority(&only_opmd, &tax, 20, 1).unwrap_err();
        assert!(err.to_string().contains("Benign"));
    }
}
