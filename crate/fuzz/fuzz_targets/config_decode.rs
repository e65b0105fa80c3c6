#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = lotj::ExperimentConfig::from_json(text) {
            // A parsed config must survive resolution and hashing.
            let _ = config.content_hash();
        }
    }
});
