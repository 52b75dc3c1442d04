#![no_main]
use libfuzzer_sys::fuzz_target;
use metagrating::geometry::DesignVector;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = text.parse::<DesignVector>() {
        assert_eq!(d.to_string().parse::<DesignVector>().unwrap(), d);
    }
});
