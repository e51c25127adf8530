#![no_main]

use aoirisk::ConfigFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Anything accepted must survive a render/parse round trip unchanged.
    if let Ok(cfg) = ConfigFile::parse(text) {
        let again = ConfigFile::parse(&cfg.to_config_text()).expect("rendered config parses");
        assert_eq!(again, cfg);
    }
});
