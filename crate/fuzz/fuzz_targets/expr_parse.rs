#![no_main]
use libfuzzer_sys::fuzz_target;

use impulse_game::expr::{parse_expr, state_vars};

fuzz_target!(|data: &[u8]| {
    let Ok(source) = std::str::from_utf8(data) else { return };
    let vars = state_vars(2);
    if let Ok(tree) = parse_expr(source, &vars) {
        // Canonical printing must reparse to the identical tree.
        let printed = tree.to_string();
        let reparsed = parse_expr(&printed, &vars).expect("printed form parses");
        assert_eq!(tree, reparsed, "round trip changed the tree for {source:?}");
        // Evaluation returns instead of panicking, whatever the values.
        let _ = tree.eval(&[0.5, -1.0, 2.0]);
        let _ = tree.eval(&[]);
    }
});
