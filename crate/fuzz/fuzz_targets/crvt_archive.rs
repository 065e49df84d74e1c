//! Decodes arbitrary bytes as a tensor archive; anything accepted must
//! re-encode to an archive that decodes identically.

#![no_main]

use carver_core::io::tensor_file::Archive;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(archive) = Archive::from_bytes(data) else {
        return;
    };
    for t in &archive.tensors {
        let _ = t.to_tensor();
    }
    let bytes = archive.to_bytes().expect("decoded archive re-encodes");
    assert_eq!(Archive::from_bytes(&bytes).expect("re-encoded archive decodes"), archive);
});
