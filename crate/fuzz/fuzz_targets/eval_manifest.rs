//! Parses arbitrary text as an evaluation manifest; accepted manifests must
//! round-trip through their TOML form.

#![no_main]

use carver_core::metrics::EvalManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(manifest) = EvalManifest::parse(text) else {
        return;
    };
    let text = manifest.to_toml().expect("parsed manifest serializes");
    assert_eq!(EvalManifest::parse(&text).expect("serialized manifest parses"), manifest);
});
