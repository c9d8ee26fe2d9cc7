#![no_main]

use bfctn::FctnRanks;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = text.parse::<FctnRanks>() {
        assert!(r.as_array().iter().all(|&v| v > 0));
        assert_eq!(r.to_string().parse::<FctnRanks>().unwrap(), r);
    }
});
