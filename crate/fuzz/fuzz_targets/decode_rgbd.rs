#![no_main]

use libfuzzer_sys::fuzz_target;
use scenegen::io::{decode_rgbd, encode_rgbd};

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = decode_rgbd(data) {
        assert_eq!(encode_rgbd(&frame), data);
    }
});
