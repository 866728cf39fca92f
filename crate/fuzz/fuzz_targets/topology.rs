#![no_main]
use libfuzzer_sys::fuzz_target;
use meshfaas::planner::TopologyFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((cluster, weights)) = TopologyFile::from_json(text) {
        let file = TopologyFile::from_state(&cluster, weights);
        let (back, w) = file.into_state().expect("saved topology reloads");
        assert_eq!(back, cluster);
        assert_eq!(w, weights);
    }
});
