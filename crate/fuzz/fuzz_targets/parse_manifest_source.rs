#![no_main]

use libfuzzer_sys::fuzz_target;
use wot_core::catalog::{parse_manifest_source, validate_id};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_manifest_source(text) {
        for e in &entries {
            assert!(validate_id(&e.id).is_ok());
            assert!(e.weight > 0);
        }
    }
});
