#![no_main]

use libfuzzer_sys::fuzz_target;
use scenegen::io::parse_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_manifest(text) {
            m.cameras().expect("accepted manifest has valid cameras");
        }
    }
});
