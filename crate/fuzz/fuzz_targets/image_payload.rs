#![no_main]

use bfctn::io::{decode_payload, encode_payload, ImageHeader};
use libfuzzer_sys::fuzz_target;

// First three bytes pick the geometry, the rest is the payload.
fuzz_target!(|data: &[u8]| {
    if data.len() < 3 {
        return;
    }
    let dim = |b: u8| (b % 8) as usize + 1;
    let header = ImageHeader::new(dim(data[0]), dim(data[1]), dim(data[2]));
    if let Ok(img) = decode_payload(&header, &data[3..]) {
        assert!(img.data().iter().all(|v| v.is_finite()));
        assert_eq!(encode_payload(&img, 1.0).unwrap(), &data[3..]);
    }
});
