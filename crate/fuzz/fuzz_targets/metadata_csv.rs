#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::dataset::parse_metadata;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = parse_metadata(data) {
        for record in table.records() {
            assert!(record.to_vector().iter().all(|v| v.is_finite()));
        }
    }
});
