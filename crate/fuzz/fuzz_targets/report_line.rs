#![no_main]

use libfuzzer_sys::fuzz_target;
use spinodal::report::{parse_report_line, read_reports};

fuzz_target!(|data: &[u8]| {
    let _ = read_reports(data);
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(r) = parse_report_line(s) {
            let _ = parse_report_line(&r.to_json_line());
        }
    }
});
