#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = cdkdv::io::parse_cd_coeffs(text, None);
        let _ = cdkdv::io::parse_cd_coeffs(text, Some(8));
    }
});
