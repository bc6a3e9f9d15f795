#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::eval::{format_prompt_manifest, parse_prompt_manifest};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(specs) = parse_prompt_manifest(text, "fuzz") {
            assert_eq!(parse_prompt_manifest(&format_prompt_manifest(&specs), "again").unwrap(), specs);
        }
    }
});
