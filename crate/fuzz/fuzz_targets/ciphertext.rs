#![no_main]

use libfuzzer_sys::fuzz_target;
use wot_core::symcrypto::{decrypt, Ciphertext, SymKey};

fuzz_target!(|data: &[u8]| {
    if let Ok(ct) = Ciphertext::from_bytes(data) {
        assert_eq!(ct.to_bytes(), data);
        let key = SymKey::from_bytes(vec![0u8; 16]);
        let _ = decrypt(&key, &ct, b"fuzz");
    }
});
