#![no_main]

use crm_core::consistency::Suite;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(suite) = Suite::from_bytes(data) {
        let again = Suite::from_jsonl(&suite.to_jsonl()).expect("written suite parses");
        assert_eq!(again, suite);
    }
});
