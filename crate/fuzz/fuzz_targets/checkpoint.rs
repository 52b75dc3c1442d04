#![no_main]
use libfuzzer_sys::fuzz_target;
use metagrating::checkpoint::{Checkpoint, CNN_MAGIC, PPO_MAGIC};

fuzz_target!(|data: &[u8]| {
    for magic in [PPO_MAGIC, CNN_MAGIC] {
        if let Ok(ckpt) = Checkpoint::from_bytes(magic, data) {
            let bytes = ckpt.to_bytes();
            assert_eq!(Checkpoint::from_bytes(magic, &bytes).unwrap().to_bytes(), bytes);
        }
    }
});
