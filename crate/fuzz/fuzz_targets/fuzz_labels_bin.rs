#![no_main]

use libfuzzer_sys::fuzz_target;
use raycull::dataset::parse_label_bytes;

fuzz_target!(|data: &[u8]| {
    if let Ok(classes) = parse_label_bytes(data) {
        assert_eq!(classes.len(), data.len() / 4);
    }
});
