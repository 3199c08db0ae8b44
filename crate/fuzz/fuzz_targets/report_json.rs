#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::evaluation::{parse_report_json, render_report, ReportFormat};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = parse_report_json(text) {
        let _ = render_report(&report, ReportFormat::Text);
        let json = render_report(&report, ReportFormat::Json);
        assert_eq!(parse_report_json(&json).expect("rendered report must parse"), report);
    }
});
