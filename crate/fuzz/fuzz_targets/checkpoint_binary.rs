//! Binary checkpoint decoder: arbitrary bytes must never panic, and anything
//! accepted must re-encode to the same bytes.

#![no_main]
use gedi::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes();
        assert_eq!(bytes, data, "accepted input is not canonical");
        let again = Checkpoint::from_bytes(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.to_bytes(), bytes);
    }
});
