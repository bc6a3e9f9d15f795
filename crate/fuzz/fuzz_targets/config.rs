#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::parse(text, "fuzz") {
            assert_eq!(RunConfig::parse(&cfg.to_text(), "again").unwrap(), cfg);
            let _ = cfg.tokenizer_config();
        }
    }
});
