#![no_main]

use libfuzzer_sys::fuzz_target;
use phs_core::dynamics::read_trajectory_table;

fuzz_target!(|data: &[u8]| {
    let _ = read_trajectory_table(data);
});
