#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = baycausal::io::read_dataset_csv(data) {
        let mut buf = Vec::new();
        baycausal::io::write_dataset_csv(&mut buf, &ds).unwrap();
        let again = baycausal::io::read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(again, ds);
    }
});
