#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = cdkdv::io::read_run_csv(text) {
            // reconstructed tables must be internally consistent enough to
            // evaluate conserved quantities without panicking
            for snapshot in &table.snapshots {
                let _ = cdkdv::transforms::conserved(snapshot);
            }
        }
    }
});
