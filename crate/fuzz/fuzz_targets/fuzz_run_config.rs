#![no_main]

use landside::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = RunConfig::from_json(data) {
        cfg.validate().unwrap();
    }
});
