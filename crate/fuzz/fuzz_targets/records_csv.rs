#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::eval::EvalRecord;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = EvalRecord::parse_csv(text, "fuzz") {
            let again = EvalRecord::parse_csv(&EvalRecord::to_csv(&records), "again").unwrap();
            assert_eq!(again.len(), records.len());
        }
    }
});
