#![no_main]

use landside::DynamicsModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(model) = DynamicsModel::from_json(data) {
        let text = model.to_json().unwrap();
        assert_eq!(DynamicsModel::from_json(&text).unwrap(), model);
    }
});
