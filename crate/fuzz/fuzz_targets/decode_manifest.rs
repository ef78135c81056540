#![no_main]

use libfuzzer_sys::fuzz_target;
use wot_core::wire::{decode_manifest, encode_manifest};

fuzz_target!(|data: &[u8]| {
    if let Ok(manifest) = decode_manifest(data) {
        let again = encode_manifest(&manifest);
        assert_eq!(decode_manifest(&again).expect("round trip"), manifest);
    }
});
