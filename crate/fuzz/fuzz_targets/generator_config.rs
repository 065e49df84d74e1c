//! Parses arbitrary text as a generator config and resolves it. A resolved
//! config must serialize, parse back and resolve to itself.

#![no_main]

use carver_core::pipeline::GeneratorConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = GeneratorConfig::from_toml(text) else {
        return;
    };
    let Ok(resolved) = cfg.resolve() else {
        return;
    };
    let text = resolved.to_toml().expect("resolved config serializes");
    let again = GeneratorConfig::from_toml(&text).expect("serialized config parses");
    assert_eq!(again.resolve().expect("resolved config resolves again"), resolved);
});
