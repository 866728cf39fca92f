#![no_main]
use libfuzzer_sys::fuzz_target;
use meshfaas::executor::protocol::decode_output;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|b| *b == b'\n').unwrap_or(data.len());
    let Ok(content_type) = std::str::from_utf8(&data[..split]) else { return };
    let body = data.get(split + 1..).unwrap_or_default().to_vec();
    let output = decode_output(content_type, body.clone());
    assert_eq!(output.as_bytes(), body.as_slice());
});
