#![no_main]

use bfctn::io::parse_header;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(h) = parse_header(text) {
        // Accepted headers print back to an equivalent header.
        assert_eq!(parse_header(&h.to_string()).unwrap(), h);
    }
});
