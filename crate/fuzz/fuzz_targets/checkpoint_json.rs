//! JSON checkpoint decoder. Accepted documents survive a trip through both
//! encodings.

#![no_main]
use gedi::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ckpt) = Checkpoint::from_json(text) {
        let bytes = ckpt.to_bytes();
        let from_bin = Checkpoint::from_bytes(&bytes).expect("binary re-encoding decodes");
        assert_eq!(from_bin.to_bytes(), bytes);
        let from_json = Checkpoint::from_json(&ckpt.to_json()).expect("json re-encoding decodes");
        assert_eq!(from_json.to_bytes(), bytes);
    }
});
