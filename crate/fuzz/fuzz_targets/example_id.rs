#![no_main]

use libfuzzer_sys::fuzz_target;
use oralfuse::dataset::parse_example_id;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((id, class, _patient, _origin)) = parse_example_id(text) {
        assert_eq!(id.as_str(), text);
        let (root, root_class, _, _) = parse_example_id(id.root().as_str()).expect("root must parse");
        assert_eq!(root_class, class);
        assert_eq!(root, id.root());
    }
});
