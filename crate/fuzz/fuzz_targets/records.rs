#![no_main]
use libfuzzer_sys::fuzz_target;
use metagrating::pipeline::{parse_records, records_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_records(text) {
        assert_eq!(parse_records(&records_to_json(&records)).unwrap(), records);
    }
});
