#![no_main]
use libfuzzer_sys::fuzz_target;
use metagrating::fieldmap::FieldMap;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = FieldMap::from_fmap_bytes(data) {
        let bytes = map.to_fmap_bytes().expect("decoded maps re-encode");
        assert_eq!(FieldMap::from_fmap_bytes(&bytes).unwrap().to_fmap_bytes().unwrap(), bytes);
    }
});
