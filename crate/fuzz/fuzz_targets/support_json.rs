#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(est) = baycausal::io::parse_b_support(text) {
            let s = baycausal::evaluation::score_graph(&est, &est).unwrap();
            assert!(s.exact);
        }
    }
});
