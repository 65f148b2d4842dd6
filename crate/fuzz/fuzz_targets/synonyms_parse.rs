#![no_main]

use crm_core::training::SynonymTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = SynonymTable::from_json(text) {
            assert!(!table.is_empty());
        }
    }
});
