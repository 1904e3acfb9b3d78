#![no_main]

use landside::ingest::{build_series, collect_transitions, parse_csv, write_csv};
use landside::VolumeScale;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(loaded) = parse_csv(data, 15) else {
        return;
    };
    // Accepted files must survive a write/parse round trip unchanged.
    let mut out = Vec::new();
    write_csv(&mut out, &loaded.records).unwrap();
    let again = parse_csv(out.as_slice(), 15).unwrap();
    assert_eq!(again.records, loaded.records);
    assert_eq!(again.gaps, loaded.gaps);

    let _ = collect_transitions(&loaded, 2);
    let _ = build_series(&loaded, 2, &VolumeScale::identity());
});
