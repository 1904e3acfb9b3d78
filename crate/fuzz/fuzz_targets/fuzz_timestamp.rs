#![no_main]

use landside::ingest::{format_timestamp, parse_timestamp};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Some(t) = parse_timestamp(data) {
        let text = format_timestamp(t);
        if text.ends_with('Z') {
            assert_eq!(parse_timestamp(&text), Some(t));
        }
    }
});
