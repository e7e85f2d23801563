//! Comma-separated variant lists and weight grids.

#![no_main]
use gedi::trainer::Variant;
use gedi_cli::config::{parse_grid, parse_list};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(vs) = parse_list::<Variant>(text) {
        assert!(!vs.is_empty());
        let joined: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
        assert_eq!(parse_list::<Variant>(&joined.join(",")).unwrap(), vs);
    }
    if let Ok(grid) = parse_grid(text) {
        assert!(grid.iter().all(|w| w.is_finite() && *w >= 0.0));
    }
});
