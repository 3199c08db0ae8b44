#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::dataset::SplitManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(manifest) = SplitManifest::parse(text) {
        let again = SplitManifest::parse(&manifest.to_text()).expect("rendered manifest must parse");
        assert_eq!(again, manifest);
    }
});
