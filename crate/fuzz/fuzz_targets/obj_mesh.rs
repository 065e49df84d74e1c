//! Parses arbitrary text as a Wavefront OBJ; accepted meshes must round-trip
//! through the writer.

#![no_main]

use carver_core::io::{format_obj, parse_obj};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mesh) = parse_obj(text) else {
        return;
    };
    assert!(mesh.triangles.iter().flatten().all(|&i| i < mesh.vertices.len()));
    assert_eq!(parse_obj(&format_obj(&mesh)).expect("written mesh parses"), mesh);
});
