#![no_main]

use aoirisk::export::load_solution_json;
use aoirisk::runtime::rollout;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // A policy that passes validation must be runnable.
    if let Ok(loaded) = load_solution_json(text) {
        let _ = rollout(&loaded.policy, &loaded.cfg, 16, 0);
    }
});
