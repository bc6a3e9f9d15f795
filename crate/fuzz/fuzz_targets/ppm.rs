#![no_main]
use libfuzzer_sys::fuzz_target;
use lvm_core::image::Image;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = Image::from_ppm(data) {
        assert_eq!(Image::from_ppm(&img.to_ppm()).unwrap(), img);
    }
});
