#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::pipeline::AugmentedManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(manifest) = AugmentedManifest::parse(text) {
        let again = AugmentedManifest::parse(&manifest.to_text()).expect("rendered manifest must parse");
        assert_eq!(again, manifest);
    }
});
