#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::model::TrainingLog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = TrainingLog::parse_jsonl(text) {
        let again = TrainingLog::parse_jsonl(&log.to_jsonl()).expect("rendered log must parse");
        assert_eq!(again, log);
    }
});
