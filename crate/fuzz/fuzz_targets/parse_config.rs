#![no_main]

use libfuzzer_sys::fuzz_target;
use vlasov_lowrank::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = parse_config(text) {
        // anything accepted must survive its own canonical form
        let again = parse_config(&config.to_string()).expect("canonical text parses");
        assert_eq!(again, config);
        assert!(config.rows() >= 1);
    }
});
