//! Fabricated datasets in the on-disk layout the pipeline ingests. Each class
//! gets its own tint and pattern so small models have something to learn.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetError, LesionClass, PixelGrid};
use crate::seed::{derive_named, rng_from};

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub classes: Vec<LesionClass>,
    pub images_per_class: usize,
    pub images_per_patient: usize,
    pub size: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: LesionClass::ALL.to_vec(),
            images_per_class: 10,
            images_per_patient: 2,
            size: 48,
            seed: 2024,
        }
    }
}

fn patient_prefix(class: LesionClass) -> &'static str {
    match class {
        LesionClass::Opmd => "OP",
        LesionClass::Benign => "BE",
        LesionClass::Healthy => "HE",
        LesionClass::OralCancer => "OC",
    }
}

fn tint(class: LesionClass) -> [f64; 3] {
    match class {
        LesionClass::Opmd => [205.0, 170.0, 160.0],
        LesionClass::Benign => [190.0, 120.0, 125.0],
        LesionClass::Healthy => [225.0, 140.0, 150.0],
        LesionClass::OralCancer => [140.0, 60.0, 70.0],
    }
}

/// One mucosa-like image: tinted noise plus a class-specific lesion shape.
pub fn synthetic_image(class: LesionClass, size: u32, rng: &mut ChaCha8Rng) -> PixelGrid {
    let base = tint(class);
    let s = size as f64;
    let (cx, cy) = (rng.random_range(0.3..0.7) * s, rng.random_range(0.3..0.7) * s);
    let radius = rng.random_range(0.15..0.3) * s;
    let mut img = PixelGrid::filled(size, size, [0, 0, 0]);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let d = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
            let inside = match class {
                LesionClass::Opmd => d < radius && ((fx + fy) as u32 / 4).is_multiple_of(2),
                LesionClass::Benign => d < radius,
                LesionClass::Healthy => false,
                LesionClass::OralCancer => d < radius * (1.0 + 0.3 * (fy - cy).atan2(fx - cx).sin()),
            };
            let mut px = [0u8; 3];
            for c in 0..3 {
                let mut v = base[c] + rng.random_range(-18.0..18.0);
                if inside {
                    v = v * 0.6 + if c == 0 { 90.0 } else { 30.0 };
                }
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            img.set_pixel(x, y, px);
        }
    }
    img
}

/// Writes `<root>/<Class>/<patient>_<k>.png` and `<root>/metadata.csv`.
pub fn write_synthetic_dataset(root: &Path, spec: &SyntheticSpec) -> Result<(), DatasetError> {
    let io = |p: &Path, e| DatasetError::io(p, e);
    fs::create_dir_all(root).map_err(|e| io(root, e))?;
    let mut csv_rows = Vec::new();
    let per_patient = spec.images_per_patient.max(1);
    for &class in &spec.classes {
        let dir = root.join(class.folder_name());
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let mut rng = rng_from(derive_named(spec.seed, class.folder_name()));
        let patients = spec.images_per_class.div_ceil(per_patient);
        let risk = match class {
            LesionClass::OralCancer => 0.8,
            LesionClass::Opmd => 0.6,
            LesionClass::Benign => 0.35,
            LesionClass::Healthy => 0.15,
        };
        for p in 0..patients {
            let patient = format!("{}{:02}", patient_prefix(class), p + 1);
            let age: u32 = rng.random_range(25..45) + (risk * 30.0) as u32;
            let yes_no = |rng: &mut ChaCha8Rng| if rng.random_bool(risk) { "Yes" } else { "No" };
            let gender = if rng.random_bool(0.6) { "Male" } else { "Female" };
            csv_rows.push([
                patient.clone(),
                age.to_string(),
                gender.to_string(),
                yes_no(&mut rng).to_string(),
                yes_no(&mut rng).to_string(),
                yes_no(&mut rng).to_string(),
            ]);
            for k in 0..per_patient {
                if p * per_patient + k >= spec.images_per_class {
                    break;
                }
                let image = synthetic_image(class, spec.size, &mut rng);
                image.save_png(&dir.join(format!("{patient}_{k}.png")))?;
            }
        }
    }
    let path = root.join("metadata.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["patient_id", "age", "gender", "smoking", "betel_quid", "alcohol"])?;
    for row in csv_rows {
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest_images, load_metadata, ClassTaxonomy};

    #[test]
    fn written_dataset_ingests() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_dataset(dir.path(), &SyntheticSpec::default()).unwrap();
        let table = load_metadata(&dir.path().join("metadata.csv")).unwrap();
        assert_eq!(table.len(), 20);
        let out = ingest_images(dir.path(), &ClassTaxonomy::four_class(), &table).unwrap();
        assert_eq!(out.examples.len(), 40);
        assert!(out.class_counts().values().all(|&n| n == 10));
    }

    #[test]
    fn deterministic_pixels() {
        let a = synthetic_image(LesionClass::Benign, 16, &mut rng_from(1));
        let b = synthetic_image(LesionClass::Benign, 16, &mut rng_from(1));
        assert_eq!(a, b);
    }
}
