#![no_main]

use libfuzzer_sys::fuzz_target;
use raycull::dataset::parse_pred_bytes;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = parse_pred_bytes(data) {
        assert!(labels.iter().all(|&b| b <= 1));
    }
});
