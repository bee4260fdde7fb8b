#![no_main]

use libfuzzer_sys::fuzz_target;
use raycull::config::parse_config_str;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config_str(text) {
        // Anything the parser accepts must already be semantically valid.
        assert!(cfg.validate().is_ok());
    }
});
