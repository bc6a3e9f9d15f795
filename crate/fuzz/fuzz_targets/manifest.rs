#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::forge::{format_manifest, parse_manifest};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(entries) = parse_manifest(text, "fuzz") {
            assert_eq!(parse_manifest(&format_manifest(&entries), "again").unwrap(), entries);
        }
    }
});
