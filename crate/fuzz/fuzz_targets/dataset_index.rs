#![no_main]
use libfuzzer_sys::fuzz_target;
use metagrating::sl::parse_index;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_index(text);
    }
});
