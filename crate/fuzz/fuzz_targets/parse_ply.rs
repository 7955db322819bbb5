#![no_main]

use libfuzzer_sys::fuzz_target;
use scenegen::io::{encode_ply, parse_ply};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(mesh) = parse_ply(text) {
            let again = parse_ply(&encode_ply(&mesh)).expect("re-encoded mesh parses");
            assert_eq!(again.faces, mesh.faces);
        }
    }
});
