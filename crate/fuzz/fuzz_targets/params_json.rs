#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = baycausal::io::parse_params(text) {
            assert!(baycausal::graph_model::check_stability(&p.b));
        }
    }
});
