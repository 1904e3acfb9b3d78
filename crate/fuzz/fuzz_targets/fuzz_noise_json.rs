#![no_main]

use landside::NoiseModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(noise) = NoiseModel::from_json(data) {
        for i in 0..4 {
            assert!(noise.lo()[i] <= 0.0 && noise.hi()[i] >= 0.0);
        }
        let text = noise.to_json().unwrap();
        assert_eq!(NoiseModel::from_json(&text).unwrap(), noise);
    }
});
