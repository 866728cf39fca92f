#![no_main]
use libfuzzer_sys::fuzz_target;
use meshfaas::invocation::{extract_data_refs, DATA_PREFIX};
use serde_json::Value;

fuzz_target!(|data: &[u8]| {
    if let Ok(Value::Object(params)) = serde_json::from_slice::<Value>(data) {
        for r in extract_data_refs(&params) {
            assert!(!r.starts_with(DATA_PREFIX));
        }
    }
});
