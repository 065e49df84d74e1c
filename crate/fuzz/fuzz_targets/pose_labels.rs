//! Parses arbitrary text as a pose label file; accepted labels must survive
//! a format/parse round trip exactly.

#![no_main]

use carver_core::io::{format_pose_labels, parse_pose_labels};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(labels) = parse_pose_labels(text) else {
        return;
    };
    let again = parse_pose_labels(&format_pose_labels(&labels)).expect("formatted labels parse");
    assert_eq!(again, labels);
});
