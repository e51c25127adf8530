#![no_main]

use aoirisk_cli::RunManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = RunManifest::parse(text) {
        let again = RunManifest::parse(&m.to_json().expect("serializes")).expect("reparses");
        assert_eq!(again, m);
    }
});
