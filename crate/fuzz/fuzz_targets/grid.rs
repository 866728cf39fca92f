#![no_main]
use libfuzzer_sys::fuzz_target;
use meshfaas::grid::GridImage;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(image) = GridImage::parse(text) {
        let back = GridImage::parse(&image.to_text()).expect("rendered grid parses");
        assert_eq!(back, image);
    }
});
