#![no_main]

use libfuzzer_sys::fuzz_target;
use raycull::dataset::{parse_ply_ascii, ply_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(cloud) = parse_ply_ascii(data) else {
        return;
    };
    if let Some(labels) = &cloud.labels {
        assert_eq!(labels.len(), cloud.points.len());
    }
    // Whatever parses must survive a serialize/parse round trip bit-exactly
    // (coordinates are f32-valued by construction).
    let text = ply_to_string(&cloud.points, cloud.labels.as_deref());
    let again = parse_ply_ascii(text.as_bytes()).expect("round trip parses");
    assert_eq!(again.points.len(), cloud.points.len());
    for (a, b) in cloud.points.iter().zip(&again.points) {
        assert_eq!((a.x as f32).to_bits(), (b.x as f32).to_bits());
        assert_eq!((a.y as f32).to_bits(), (b.y as f32).to_bits());
        assert_eq!((a.z as f32).to_bits(), (b.z as f32).to_bits());
    }
    assert_eq!(again.labels, cloud.labels);
});
