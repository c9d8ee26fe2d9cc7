#![no_main]

use bfctn::harness::ScenarioSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Some(s) = ScenarioSpec::from_name(text) {
        assert!(matches!(s.sf, 4 | 8 | 16));
    }
    if let Ok(s) = serde_json::from_str::<ScenarioSpec>(text) {
        let back: ScenarioSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back.name, s.name);
    }
});
