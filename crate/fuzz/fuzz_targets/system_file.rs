#![no_main]

use libfuzzer_sys::fuzz_target;
use phs_cli::analysis::{analyse, build_system, Settings};
use phs_cli::sysfile::parse_system;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = parse_system(text) else { return };
    // analysis may reject the system but must not panic
    if let Ok(a) = analyse(&file, &Settings::default(), false) {
        let _ = build_system(&file, &a);
    }
});
