#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes().expect("loaded checkpoint must serialize");
        assert!(Checkpoint::from_bytes(&bytes).is_ok());
    }
});
