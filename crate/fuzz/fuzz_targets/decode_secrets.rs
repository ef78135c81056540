#![no_main]

use libfuzzer_sys::fuzz_target;
use wot_core::store::{decode_secrets, encode_secrets};

fuzz_target!(|data: &[u8]| {
    if let Ok(secrets) = decode_secrets(data) {
        let bytes = encode_secrets(&secrets);
        let again = decode_secrets(&bytes).expect("round trip");
        assert_eq!(encode_secrets(&again), bytes);
    }
});
