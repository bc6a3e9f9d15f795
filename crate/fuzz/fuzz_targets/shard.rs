#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::pack::{shard_from_bytes, shard_to_bytes, VocabularyLayout};

fuzz_target!(|data: &[u8]| {
    if let Ok((h, windows)) = shard_from_bytes(data) {
        let layout = VocabularyLayout::new(h.codebook_size).unwrap();
        let again = shard_to_bytes(&layout, h.window, &windows).unwrap();
        assert_eq!(shard_from_bytes(&again).unwrap().1, windows);
    }
});
