#![allow(dead_code)]

use std::path::PathBuf;

use oralfuse::dataset::{example_id_for, LabeledExample, LesionClass, Origin, PixelGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `n` originals of `class`, one patient per image.
pub fn originals(class: LesionClass, n: usize) -> Vec<LabeledExample> {
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

pub fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> PixelGrid {
    let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    PixelGrid::new(w, h, data).unwrap()
}
