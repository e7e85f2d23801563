//! Run-config parser. Whatever parses must snapshot and re-parse to the same
//! snapshot.

#![no_main]
use gedi::data::DatasetKind;
use gedi::trainer::{RunConfig, Variant};
use gedi_cli::config::{parse_config, to_snapshot};
use libfuzzer_sys::fuzz_target;

const MAX_INPUT: usize = 64 * 1024;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let defaults = RunConfig::toy(DatasetKind::Moons, Variant::Gedi);
    let Ok(cfg) = parse_config(text, &defaults) else {
        return;
    };
    let _ = cfg.validate();
    if let Ok(snap) = to_snapshot(&cfg) {
        let again = parse_config(&snap, &defaults).expect("snapshot re-parses");
        assert_eq!(to_snapshot(&again).unwrap(), snap);
    }
});
