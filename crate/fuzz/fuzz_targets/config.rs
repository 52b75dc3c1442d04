#![no_main]
use libfuzzer_sys::fuzz_target;
use metagrating::pipeline::{Config, Profile};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = Config::layered(Profile::Smoke, Some(text), &[]) {
        // a validated config survives its own serialization
        let again = Config::layered(Profile::Reduced, Some(&cfg.to_toml()), &[]).unwrap();
        assert_eq!(again, cfg);
    }
});
