#![no_main]

use landside::eval::CampaignReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(report) = CampaignReport::from_json(data) {
        let _ = report.speed_ratio_csv();
        let _ = report.vehicle_hours_csv();
    }
});
