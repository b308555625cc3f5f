#![no_main]

use libfuzzer_sys::fuzz_target;
use phs_core::expr::{parse_expr, parse_raw, VarId};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let vars = [
        VarId::state("q", 0),
        VarId::state("p", 1),
        VarId::multiplier("lam", 0),
        VarId::input("u", 0),
        VarId::parameter("m", 0),
    ];
    let _ = parse_raw(text, &vars);
    if let Ok(e) = parse_expr(text, &vars) {
        let printed = e.to_string();
        let again = parse_expr(&printed, &vars).expect("printed form parses");
        // float folding is order dependent, so only exact trees are fixed points
        if e.is_exact() {
            assert_eq!(again, e, "roundtrip through {printed:?}");
        }
    }
});
