#![no_main]
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use meshfaas::catalog::CatalogSnapshot;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(snapshot) = CatalogSnapshot::from_json(Path::new("fuzz.json"), text) {
        let again = CatalogSnapshot::from_json(Path::new("fuzz.json"), &snapshot.to_json())
            .expect("a loaded snapshot reloads");
        assert_eq!(again, snapshot);
    }
});
