//! Every checked-in fuzz seed must stay a valid input for its parser.

use std::fs;
use std::path::{Path, PathBuf};

use oralfuse::dataset::{decode_image, parse_example_id, parse_metadata, SplitManifest};
use oralfuse::evaluation::parse_report_json;
use oralfuse::model::{Checkpoint, TrainingLog};
use oralfuse::pipeline::{AugmentedManifest, PipelineConfig};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn seeds_parse() {
    for (p, b) in seeds("metadata_csv") {
        parse_metadata(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("split_manifest") {
        let m = SplitManifest::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(m.to_text(), text(&b));
    }
    for (p, b) in seeds("augmented_manifest") {
        let m = AugmentedManifest::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(m.to_text(), text(&b));
    }
    for (p, b) in seeds("checkpoint") {
        let c = Checkpoint::from_bytes(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(c.to_bytes().unwrap(), b);
    }
    for (p, b) in seeds("training_log") {
        let log = TrainingLog::parse_jsonl(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(log.to_jsonl(), text(&b));
    }
    for (p, b) in seeds("report_json") {
        parse_report_json(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("pipeline_config") {
        PipelineConfig::from_toml(text(&b), Path::new("/")).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("example_id") {
        parse_example_id(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("image_decode") {
        decode_image(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
