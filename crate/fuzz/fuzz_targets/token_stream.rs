#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::pack::{streams_from_bytes, streams_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok((layout, streams)) = streams_from_bytes(data) {
        let again = streams_to_bytes(&layout, &streams).unwrap();
        assert_eq!(streams_from_bytes(&again).unwrap().1, streams);
    }
});
