#![no_main]

use libfuzzer_sys::fuzz_target;
use stackelberg_heat::scenario::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ScenarioConfig::from_json_str(text) {
        // Accepted configs must survive normalization and re-emission.
        let once = config.normalized();
        let json = once.to_json_string().expect("valid config serializes");
        let again = ScenarioConfig::from_json_str(&json).expect("re-emitted config parses");
        assert_eq!(again.normalized().to_json_string().unwrap(), json);
    }
});
