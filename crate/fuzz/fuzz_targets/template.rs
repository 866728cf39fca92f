#![no_main]
use libfuzzer_sys::fuzz_target;
use meshfaas::workflow::{parse_template, Segment};

fuzz_target!(|text: &str| {
    if let Ok(segments) = parse_template(text) {
        for s in segments {
            if let Segment::Literal(l) = s {
                assert!(!l.contains("${"));
            }
        }
    }
});
