#![no_main]

use libfuzzer_sys::fuzz_target;
use wot_core::weights::parse_prices;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(prices) = parse_prices(text) {
        assert!(prices.iter().all(|&p| p > 0));
        let joined: String = prices.iter().map(|p| format!("{p}\n")).collect();
        assert_eq!(parse_prices(&joined).expect("round trip"), prices);
    }
});
