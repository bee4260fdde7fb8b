#![no_main]

use libfuzzer_sys::fuzz_target;
use raycull::synth::{generate, parse_scene_script};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(script) = parse_scene_script(text) else {
        return;
    };
    // Run the generator only on scenes small enough to sample quickly.
    let rays = script.sensor.n_az.saturating_mul(script.sensor.n_el);
    if rays <= 4096 && script.frames <= 4 && script.static_boxes.len() + script.movers.len() <= 8 {
        let frames = generate(&script);
        assert_eq!(frames.len(), script.frames);
        for f in &frames {
            assert!(f.scan.points.len() <= rays);
            assert_eq!(f.scan.points.len(), f.moving.len());
        }
    }
});
