#![no_main]
use libfuzzer_sys::fuzz_target;

use impulse_game::problem::{load_problem, LoadOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Loading must never panic; a tiny sample count keeps iterations fast.
    let opts = LoadOptions { enforce_costs: true, cost_samples: 4, cost_seed: 1 };
    if let Ok(spec) = load_problem(text, &opts) {
        // A spec that loads must expose a buildable action grid.
        let grid = spec.actions.build_grid().expect("validated specs build grids");
        grid.check_invariants().expect("grid invariants hold");
    }
});
