#![no_main]
use axum::http::{header, HeaderMap, HeaderValue};
use libfuzzer_sys::fuzz_target;
use meshfaas::gateway::parse_parameters;

fuzz_target!(|data: &[u8]| {
    let Some((&flag, body)) = data.split_first() else { return };
    let mut headers = HeaderMap::new();
    match flag % 3 {
        0 => {}
        1 => {
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
        }
        _ => {
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("text/plain"));
        }
    }
    let _ = parse_parameters(&headers, body);
});
