#![no_main]

use crm_core::training::{parse_task_data_bytes, parse_task_data_str, write_task_data};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(examples) = parse_task_data_bytes(data) {
        assert_eq!(parse_task_data_str(&write_task_data(&examples)).unwrap(), examples);
    }
});
