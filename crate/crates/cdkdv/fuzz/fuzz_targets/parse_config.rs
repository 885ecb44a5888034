#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // parsing must never panic; validated configs must also survive
        // assembly (no file loads in the fuzz harness)
        if let Ok(config) = cdkdv::config::parse_config(text) {
            let _ = cdkdv::config::prepare_run(&config, |_| Err("no files".to_string()));
        }
    }
});
