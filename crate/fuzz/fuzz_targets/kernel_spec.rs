#![no_main]

use bfctn::degradation::{build_kernel, KernelSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(k) = KernelSpec::parse(text, 4) else { return };
    assert_eq!(k.to_string().parse::<KernelSpec>().unwrap(), k);
    // Keep rasterization cheap; huge supports are valid but slow.
    let small = match &k {
        KernelSpec::Average { size } => *size <= 64,
        KernelSpec::Gaussian { support, .. }
        | KernelSpec::Elliptical { support, .. }
        | KernelSpec::Hybrid { support, .. }
        | KernelSpec::SensorVarying { support, .. } => *support <= 64,
        KernelSpec::Motion { length, .. } => *length <= 64.0,
    };
    if small {
        if let Ok(kernel) = build_kernel(&k, 2) {
            let s: f64 = kernel.values.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
});
