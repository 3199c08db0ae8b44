//! Desk-scale acceptance suite. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.
//!
//! cargo test -p oralfuse-cli --test acceptance -- --nocapture

// Negated comparisons are deliberate: a NaN must fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use oralfuse::augmentation::{
    apply_transform, expand_training_set, h_flip, oversample_minority, render_hashes, rot90, scale_to_unit,
    standardize, v_flip, AugmentationPlan, NormalizationParams, TransformKind, TransformSpec,
};
use oralfuse::dataset::{
    apportion, example_id_for, stratified_split, ClassTaxonomy, DatasetError, Grouping, LabeledExample, LesionClass,
    Origin, PixelGrid, SplitManifest, SplitRatios, Subset,
};
use oralfuse::evaluation::{compute_report, parse_report_json, ConfusionMatrix};
use oralfuse::model::{
    build_model, compute_class_weights, cross_entropy_grad, train, weighted_cross_entropy, ClassWeights,
    EarlyStopping, EncoderSpec, FusionConfig, FusionModel, ModelError, Sample, TrainObserver, Trainable,
    TrainingLog, TrainingSchedule,
};
use oralfuse::seed::{derive_named, rng_from};
use oralfuse::synthetic::synthetic_image;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn originals(class: LesionClass, n: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            let patient = format!("{}{i:05}", class.folder_name());
            let file = format!("{patient}_0.png");
            LabeledExample {
                id: example_id_for(class, &file),
                image_path: PathBuf::from(&file),
                patient_id: patient,
                label: class,
                origin: Origin::Original,
            }
        })
        .collect()
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> PixelGrid {
    PixelGrid::new(w, h, (0..w * h * 3).map(|_| rng.random::<u8>()).collect()).unwrap()
}

fn taxonomy_of(k: usize) -> ClassTaxonomy {
    ClassTaxonomy::new(format!("k{k}"), LesionClass::ALL[..k].to_vec()).unwrap()
}

fn split_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(1);
    let ratios = SplitRatios::default();
    for case in 0..200 {
        let k = rng.random_range(2..=4);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(3..=5000)).collect();
        let seed: u64 = rng.random();
        let tax = taxonomy_of(k);
        let examples: Vec<_> = tax.classes().iter().zip(&sizes).flat_map(|(&c, &n)| originals(c, n)).collect();
        let m = stratified_split(&examples, &tax, ratios, seed, Grouping::Image).map_err(|e| e.to_string())?;
        ensure!(m.len() == examples.len(), "case {case}: {} assigned of {}", m.len(), examples.len());
        ensure!(
            examples.iter().all(|e| m.subset_of(&e.id).is_some()),
            "case {case}: an example is missing from the manifest"
        );
        let counts = m.per_class_counts();
        for (&class, &n) in tax.classes().iter().zip(&sizes) {
            let mut total = 0;
            for (subset, r) in Subset::ALL.into_iter().zip(ratios.as_array()) {
                let got = counts.get(&(class, subset)).copied().unwrap_or(0);
                total += got;
                let dev = (got as f64 - r * n as f64).abs();
                ensure!(dev < 1.0, "case {case}: {class} {subset:?} has {got} of {n}, deviation {dev}");
            }
            ensure!(total == n, "case {case}: {class} partitions {total} of {n}");
        }
        let rerun = stratified_split(&examples, &tax, ratios, seed, Grouping::Image).map_err(|e| e.to_string())?;
        ensure!(m.to_text() == rerun.to_text(), "case {case}: rerun differs");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(())
}

/// Exhaustive search over every (train, val, test) with the right total,
/// minimizing squared deviation in exact integer arithmetic (percent units).
/// Ties prefer the lexicographically larger triple.
fn brute_force_apportion(n: usize, pct: [i64; 3]) -> [usize; 3] {
    let n = n as i64;
    let mut best = (i64::MAX, [0i64; 3]);
    for a in 0..=n {
        for b in 0..=n - a {
            let c = n - a - b;
            let cost: i64 = [a, b, c].iter().zip(pct).map(|(&k, p)| (100 * k - n * p).pow(2)).sum();
            if cost < best.0 || (cost == best.0 && [a, b, c] > best.1) {
                best = (cost, [a, b, c]);
            }
        }
    }
    best.1.map(|v| v as usize)
}

fn split_of_reference_distribution() -> Outcome {
    let frozen = [(1394, [976, 209, 209]), (748, [524, 112, 112]), (729, [510, 110, 109]), (129, [90, 20, 19])];
    let ratios = SplitRatios::default();
    let tax = ClassTaxonomy::four_class();
    let mut examples = Vec::new();
    for (&class, (n, expected)) in tax.classes().iter().zip(frozen) {
        let oracle = brute_force_apportion(n, [70, 15, 15]);
        let got = apportion(n, &ratios);
        ensure!(got == oracle, "{n}: apportion {got:?} vs oracle {oracle:?}");
        ensure!(got == expected, "{n}: apportion {got:?} vs frozen {expected:?}");
        examples.extend(originals(class, n));
    }
    let m = stratified_split(&examples, &tax, ratios, 42, Grouping::Image).map_err(|e| e.to_string())?;
    let counts = m.per_class_counts();
    for (&class, (_, expected)) in tax.classes().iter().zip(frozen) {
        let got = Subset::ALL.map(|s| counts.get(&(class, s)).copied().unwrap_or(0));
        ensure!(got == expected, "{class}: split {got:?} vs {expected:?}");
    }
    Ok(())
}

fn normalization() -> Outcome {
    let p = NormalizationParams::default();
    let mut rng = rng_from(3);
    for case in 0..100 {
        let (w, h) = (rng.random_range(1..64), rng.random_range(1..64));
        let img = random_image(&mut rng, w, h);
        let out = standardize(&scale_to_unit(&img), &p).map_err(|e| e.to_string())?;
        ensure!(out.data.len() == img.data().len(), "case {case}: length");
        for (i, (&x, &y)) in img.data().iter().zip(&out.data).enumerate() {
            let c = i % 3;
            let want = (f64::from(x) / 255.0 - p.mean[c]) / p.std[c];
            ensure!((want - y).abs() <= 1e-6, "case {case} value {i}: {y} vs {want}");
        }
    }
    for k in 0..=255u8 {
        let mu = f64::from(k) / 255.0;
        let centered = NormalizationParams { mean: [mu; 3], std: p.std };
        let out = standardize(&scale_to_unit(&PixelGrid::filled(2, 2, [k; 3])), &centered).map_err(|e| e.to_string())?;
        ensure!(out.data.iter().all(|&v| v == 0.0), "pixel {k} at its mean gave {:?}", out.data);
    }
    Ok(())
}

fn augmentation_counts_and_identities() -> Outcome {
    let tax = ClassTaxonomy::two_class();
    let mut examples = originals(LesionClass::Opmd, 523);
    examples.extend(originals(LesionClass::Benign, 976));
    let split = stratified_split(&examples, &tax, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 1, Grouping::Image)
        .map_err(|e| e.to_string())?;
    let plan = AugmentationPlan::default();
    ensure!(plan.copies_per_image == 5, "default copies {}", plan.copies_per_image);
    let expanded = expand_training_set(&examples, &split, &plan).map_err(|e| e.to_string())?;
    let count = |set: &[LabeledExample], c| set.iter().filter(|e| e.label == c).count();
    let after = (count(&expanded, LesionClass::Opmd), count(&expanded, LesionClass::Benign));
    ensure!(after == (3138, 5856), "expanded to {after:?}");
    let kept = expanded.iter().filter(|e| e.origin == Origin::Original).count();
    ensure!(kept == 1499, "{kept} originals kept");
    let over = oversample_minority(&expanded, &tax, 4200, 9).map_err(|e| e.to_string())?;
    let after = (count(&over, LesionClass::Opmd), count(&over, LesionClass::Benign));
    ensure!(after == (4200, 5856), "oversampled to {after:?}");

    let mut rng = rng_from(4);
    for case in 0..50 {
        let (w, h) = (rng.random_range(1..80), rng.random_range(1..80));
        let img = random_image(&mut rng, w, h);
        ensure!(h_flip(&h_flip(&img)) == img, "case {case}: horizontal flip");
        ensure!(v_flip(&v_flip(&img)) == img, "case {case}: vertical flip");
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90(&r, 1);
        }
        ensure!(r == img, "case {case}: rot90 order");
        ensure!(rot90(&img, 1) != img || w == h, "case {case}: rot90 changed nothing");
    }
    let white = PixelGrid::filled(224, 224, [255; 3]);
    let spec = TransformSpec::new(TransformKind::coarse_dropout(), 1.0);
    for seed in 0..200 {
        let out = apply_transform(&spec, &white, &mut rng_from(seed)).map_err(|e| e.to_string())?;
        let zeroed = out.data().chunks_exact(3).filter(|p| p == &[0, 0, 0]).count();
        ensure!(zeroed <= 7200, "seed {seed}: {zeroed} pixels zeroed");
    }
    Ok(())
}

fn parallel_determinism() -> Outcome {
    let tax = ClassTaxonomy::four_class();
    let examples: Vec<_> = tax.classes().iter().zip([9, 5, 7, 3]).flat_map(|(&c, n)| originals(c, n)).collect();
    let split = stratified_split(&examples, &tax, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 2, Grouping::Image)
        .map_err(|e| e.to_string())?;
    let plan = AugmentationPlan::default().with_seed(derive_named(42, "augment"));
    let loader = |e: &LabeledExample| -> Result<PixelGrid, DatasetError> {
        Ok(random_image(&mut rng_from(derive_named(5, e.id.root().as_str())), 96, 80))
    };
    let run = |workers: usize| -> Result<BTreeMap<_, _>, String> {
        let expanded = expand_training_set(&examples, &split, &plan).map_err(|e| e.to_string())?;
        let over = oversample_minority(&expanded, &tax, 50, 6).map_err(|e| e.to_string())?;
        let hashes = render_hashes(&over, &plan, &loader, workers).map_err(|e| e.to_string())?;
        ensure!(hashes.len() == over.len(), "{} hashes for {} examples", hashes.len(), over.len());
        Ok(hashes)
    };
    let one = run(1)?;
    let eight = run(8)?;
    ensure!(one.keys().eq(eight.keys()), "example ids differ");
    for (id, h) in &one {
        ensure!(eight[id] == *h, "{id}: hash differs between 1 and 8 workers");
    }
    Ok(())
}

fn metrics_oracle() -> Outcome {
    let mut rng = rng_from(6);
    for case in 0..500 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=1000);
        let tax = taxonomy_of(k);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let cm = ConfusionMatrix::from_indices(&truth, &pred, &tax).map_err(|e| e.to_string())?;
        let r = compute_report(&cm).map_err(|e| e.to_string())?;
        let pairs: Vec<_> = truth.iter().zip(&pred).collect();
        for c in 0..k {
            let tp = pairs.iter().filter(|(t, p)| **t == c && **p == c).count();
            let predicted = pred.iter().filter(|&&p| p == c).count();
            let support = truth.iter().filter(|&&t| t == c).count();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            let m = &r.per_class[c];
            ensure!(
                m.precision == precision && m.recall == recall && m.f1 == f1 && m.support == support as u64,
                "case {case} class {c}: {m:?} vs oracle p {precision} r {recall} f1 {f1} n {support}"
            );
            for t in 0..k {
                let cell = pairs.iter().filter(|(a, b)| **a == t && **b == c).count() as u64;
                ensure!(cm.counts[t][c] == cell, "case {case}: cell ({t},{c})");
            }
        }
        let accuracy = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n as f64;
        ensure!(r.overall_accuracy == accuracy, "case {case}: accuracy {} vs {accuracy}", r.overall_accuracy);
        let weighted: f64 = r.per_class.iter().map(|m| m.support as f64 * m.recall).sum::<f64>() / n as f64;
        ensure!((weighted - accuracy).abs() <= 1e-12, "case {case}: micro identity {weighted} vs {accuracy}");
    }
    let hand = ConfusionMatrix { taxonomy: ClassTaxonomy::two_class(), counts: vec![vec![8, 2], vec![1, 9]] };
    let r = compute_report(&hand).map_err(|e| e.to_string())?;
    ensure!((r.overall_accuracy - 0.85).abs() < 1e-12, "hand accuracy {}", r.overall_accuracy);
    ensure!((r.per_class[0].precision - 0.8889).abs() <= 5e-5, "hand precision {}", r.per_class[0].precision);
    Ok(())
}

fn loss_and_gradients() -> Outcome {
    let loss = weighted_cross_entropy(&[vec![0.0, 0.0]], &[0], &ClassWeights::uniform(2)).map_err(|e| e.to_string())?;
    ensure!((loss - std::f64::consts::LN_2).abs() <= 1e-9, "uniform loss {loss}");

    let mut model = build_model(
        &EncoderSpec::desk_scale(),
        &ClassTaxonomy::four_class(),
        5,
        &FusionConfig::default(),
        derive_named(42, "init"),
    )
    .map_err(|e| e.to_string())?;
    let mut rng = rng_from(7);
    let image: Vec<f64> = (0..model.image_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let meta = [0.35, 1.0, 0.0, 1.0, 0.0];
    let weights = ClassWeights { weights: vec![0.8, 1.3, 1.1, 0.9] };
    let label = 2;
    let trace = model.forward(&image, &meta, None).map_err(|e| e.to_string())?;
    let (_, dlogits) = cross_entropy_grad(&trace.logits, label, &weights, 1).map_err(|e| e.to_string())?;
    let mut grads = model.params.zeros_like();
    let head_only = Trainable { encoder_from: model.encoder.depth(), metadata: false, head: true };
    model.backward(&trace, &dlogits, &mut grads, head_only);
    let analytic: Vec<(String, Vec<f64>)> =
        grads.tensors().into_iter().map(|(name, t)| (name, t.to_vec())).collect();
    let loss_of = |m: &FusionModel| -> Result<f64, ModelError> {
        Ok(cross_entropy_grad(&m.logits(&image, &meta)?, label, &weights, 1)?.0)
    };
    let h = 1e-5;
    let mut checked = 0;
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        if !name.starts_with("head.") {
            continue;
        }
        for k in 0..12 {
            let idx = (k * 7919 + 3) % grad.len();
            let orig = model.params.tensors_mut()[ti][idx];
            model.params.tensors_mut()[ti][idx] = orig + h;
            let up = loss_of(&model).map_err(|e| e.to_string())?;
            model.params.tensors_mut()[ti][idx] = orig - h;
            let down = loss_of(&model).map_err(|e| e.to_string())?;
            model.params.tensors_mut()[ti][idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[idx];
            let rel = (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-8);
            ensure!(rel <= 1e-4, "{name}[{idx}]: analytic {a} numeric {numeric} rel {rel}");
            checked += 1;
        }
    }
    ensure!(checked == 48, "checked {checked} head entries");
    Ok(())
}

#[derive(Default)]
struct FreezeProbe {
    initial: String,
    after_stage1: Option<String>,
    stage_lrs: Vec<(u8, f64)>,
}

impl TrainObserver for FreezeProbe {
    fn on_stage_start(&mut self, stage: u8, learning_rate: f64, _trainable: Trainable) {
        self.stage_lrs.push((stage, learning_rate));
    }

    fn on_stage_end(&mut self, stage: u8, model: &FusionModel) {
        if stage == 1 {
            self.after_stage1 = Some(model.encoder_checksum());
        }
    }
}

fn freeze_contract() -> Outcome {
    let tax = ClassTaxonomy::four_class();
    let norm = NormalizationParams::default();
    let mut rng = rng_from(8);
    let to_sample = |img: &PixelGrid, label: usize, i: usize| -> Result<Sample, String> {
        let f = standardize(&scale_to_unit(img), &norm).map_err(|e| e.to_string())?;
        Ok(Sample {
            image: f.to_chw(),
            metadata: [0.2 + 0.05 * i as f64, (i % 2) as f64, i.is_multiple_of(3) as u8 as f64, 1.0, 0.0],
            label,
        })
    };
    let mut train_set = Vec::new();
    let mut val = Vec::new();
    for (label, &class) in tax.classes().iter().enumerate() {
        for i in 0..4 {
            train_set.push(to_sample(&synthetic_image(class, 224, &mut rng), label, i)?);
        }
        val.push(to_sample(&synthetic_image(class, 224, &mut rng), label, 9)?);
    }
    ensure!(train_set.len() == 16, "{} training examples", train_set.len());
    let model = build_model(&EncoderSpec::desk_scale(), &tax, 5, &FusionConfig::default(), 8).map_err(|e| e.to_string())?;
    let mut schedule = TrainingSchedule::default();
    schedule.stage1.epochs = 2;
    schedule.stage2.epochs = 1;
    schedule.batch_size = 8;
    let mut probe = FreezeProbe { initial: model.encoder_checksum(), ..FreezeProbe::default() };
    let out = train(model, &schedule, &train_set, &val, &ClassWeights::uniform(4), 8, &mut probe)
        .map_err(|e| e.to_string())?;
    ensure!(
        probe.after_stage1.as_deref() == Some(probe.initial.as_str()),
        "encoder checksum changed during stage 1"
    );
    ensure!(probe.stage_lrs == vec![(1, 1e-3), (2, 1e-5)], "stage learning rates {:?}", probe.stage_lrs);
    let stage2: Vec<f64> = out.log.stage(2).map(|r| r.learning_rate).collect();
    ensure!(stage2 == vec![1e-5], "stage 2 log learning rates {stage2:?}");

    let patience = 5;
    let mut stopper = EarlyStopping::new(patience);
    let mut halted = None;
    for epoch in 1..=20 {
        if stopper.update(0.9 - 0.01 * epoch as f64) {
            halted = Some(epoch);
            break;
        }
    }
    ensure!(matches!(halted, Some(e) if e <= patience + 1), "early stopping halted at {halted:?}");
    Ok(())
}

fn class_weights() -> Outcome {
    let tax = ClassTaxonomy::two_class();
    let counts = BTreeMap::from([(LesionClass::Opmd, 100), (LesionClass::Benign, 300)]);
    let w = compute_class_weights(&tax, &counts).map_err(|e| e.to_string())?;
    ensure!((w.weights[0] - 2.0).abs() <= 1e-4 && (w.weights[1] - 0.6667).abs() <= 1e-4, "{:?}", w.weights);
    let mut rng = rng_from(10);
    for _ in 0..200 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=100_000);
        let tax = taxonomy_of(k);
        let counts: BTreeMap<_, _> = tax.classes().iter().map(|&c| (c, n)).collect();
        let w = compute_class_weights(&tax, &counts).map_err(|e| e.to_string())?;
        ensure!(w.weights.iter().all(|&x| x == 1.0), "balanced {k}x{n} gave {:?}", w.weights);
    }
    Ok(())
}

fn run_cli(workdir: &Path) -> Result<Duration, String> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata/desk.toml");
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_oralfuse"))
        .args(["run-all", "--desk-scale", "--config"])
        .arg(&config)
        .arg("--workdir")
        .arg(workdir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "run-all exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(start.elapsed())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run_cli(&a)?;
    ensure!(first < Duration::from_secs(300), "run-all took {first:?}");
    run_cli(&b)?;
    let read = |root: &Path, rel: &str| std::fs::read_to_string(root.join(rel)).map_err(|e| format!("{rel}: {e}"));

    let report = parse_report_json(&read(&a, "reports/report.json")?).map_err(|e| e.to_string())?;
    ensure!(report.per_class.len() == 4, "{} report rows", report.per_class.len());
    let mut values = vec![report.overall_accuracy];
    for m in &report.per_class {
        values.extend([m.precision, m.recall, m.f1]);
    }
    ensure!(values.iter().all(|v| (0.0..=1.0).contains(v)), "metric outside [0,1]: {values:?}");
    ensure!(read(&a, "reports/report.txt")?.contains("Overall Accuracy"), "text report lacks accuracy row");

    for rel in ["split.manifest", "augmented.manifest"] {
        ensure!(read(&a, rel)? == read(&b, rel)?, "{rel} differs between runs");
    }
    SplitManifest::parse(&read(&a, "split.manifest")?).map_err(|e| e.to_string())?;
    let la = TrainingLog::parse_jsonl(&read(&a, "logs/training.jsonl")?).map_err(|e| e.to_string())?;
    let lb = TrainingLog::parse_jsonl(&read(&b, "logs/training.jsonl")?).map_err(|e| e.to_string())?;
    let (ra, rb) = (la.records.first(), lb.records.first());
    ensure!(ra.is_some() && rb.is_some(), "empty training log");
    let (ra, rb) = (ra.unwrap(), rb.unwrap());
    ensure!(ra.train_loss == rb.train_loss, "epoch-1 loss {} vs {}", ra.train_loss, rb.train_loss);
    ensure!(ra.train_loss.is_finite(), "epoch-1 loss {}", ra.train_loss);
    ensure!(a.join("run_manifest.json").is_file(), "run manifest missing");
    Ok(())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("stratified split property suite", split_properties),
        ("reference distribution matches brute-force apportionment", split_of_reference_distribution),
        ("normalization formula and zero at the mean", normalization),
        ("augmentation multiplicity, oversampling and transform identities", augmentation_counts_and_identities),
        ("determinism across 1 and 8 workers", parallel_determinism),
        ("metrics against a counting oracle", metrics_oracle),
        ("loss value and head gradients", loss_and_gradients),
        ("freeze contract, stage 2 learning rate, early stopping", freeze_contract),
        ("class weights", class_weights),
        ("end-to-end desk-scale run-all", end_to_end),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("[PASS] {:>2}. {name} ({secs:.1}s)", i + 1),
            Err(e) => {
                println!("[FAIL] {:>2}. {name} ({secs:.1}s): {e}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
