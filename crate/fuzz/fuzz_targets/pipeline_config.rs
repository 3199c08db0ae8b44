#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use oralfuse::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = PipelineConfig::from_toml(text, Path::new("/nonexistent")) {
        let _ = config.validate();
        let _ = config.plan();
    }
});
