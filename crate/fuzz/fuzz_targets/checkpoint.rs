#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::checkpoint::Container;
use lvm_core::model::{Model, Trainer};
use lvm_core::vq::Tokenizer;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        assert_eq!(Container::from_bytes(&c.to_bytes()).unwrap(), c);
        // semantic loaders must reject bad contents without panicking
        let _ = Tokenizer::from_container(&c);
        let _ = Model::from_container(&c);
        let _ = Trainer::from_container(&c);
    }
});
