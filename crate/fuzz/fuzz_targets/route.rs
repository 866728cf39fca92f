#![no_main]
use libfuzzer_sys::fuzz_target;
use meshfaas::catalog::validate_route;

fuzz_target!(|route: &str| {
    if validate_route(route).is_ok() {
        assert!(route.starts_with('/') && route.ends_with('/'));
        assert!(!route.contains("//"));
    }
});
