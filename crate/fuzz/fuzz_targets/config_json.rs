#![no_main]

use libfuzzer_sys::fuzz_target;
use rrdps_core::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = RunConfig::from_json_slice(data) {
        // Anything that parses must survive a dump and reload unchanged.
        let again = RunConfig::from_json(&config.to_json_compact()).expect("dumped config reloads");
        assert_eq!(config.to_json_compact(), again.to_json_compact());
        let _ = config.validate();
    }
});
