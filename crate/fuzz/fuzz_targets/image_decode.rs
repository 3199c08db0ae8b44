#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::dataset::{decode_image, resize_image};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image(data) {
        assert_eq!(img.data().len(), img.width() as usize * img.height() as usize * 3);
        if img.width() * img.height() <= 1 << 20 {
            let _ = resize_image(&img, 32, 32).expect("resize of a decoded image");
        }
    }
});
