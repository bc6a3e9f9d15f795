#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::model::read_loss_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = read_loss_csv(text, "fuzz");
    }
});
