#![no_main]

use crm_core::consistency::EvalReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = EvalReport::from_json(text);
    }
});
