#![no_main]

use libfuzzer_sys::fuzz_target;
use raycull::dataset::parse_scan_bytes;

fuzz_target!(|data: &[u8]| {
    if let Ok(scan) = parse_scan_bytes(data) {
        assert!(scan.points.len() <= scan.raw_count);
        assert_eq!(scan.points.len(), scan.raw_indices.len());
        assert!(scan.points.iter().all(|p| p.is_finite()));
    }
});
