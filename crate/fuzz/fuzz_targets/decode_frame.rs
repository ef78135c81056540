#![no_main]

use libfuzzer_sys::fuzz_target;
use wot_core::wire::{decode_frame, encode_frame};

fuzz_target!(|data: &[u8]| {
    if let Ok((msg, used)) = decode_frame(data) {
        assert!(used <= data.len());
        let again = encode_frame(&msg).expect("decoded message re-encodes");
        assert_eq!(decode_frame(&again).expect("round trip").0, msg);
    }
});
