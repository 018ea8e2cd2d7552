#![no_main]
use libfuzzer_sys::fuzz_target;

use impulse_game::bundle::BundleMeta;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Index parsing and validation must never panic; a meta that passes
    // validation must re-serialize and re-validate cleanly.
    if let Ok(meta) = BundleMeta::from_json(text) {
        let json = serde_json::to_string(&meta).expect("valid meta serializes");
        let again = BundleMeta::from_json(&json).expect("serialized meta revalidates");
        assert_eq!(meta, again);
    }
});
