#![no_main]

use crm_core::lexicon::{parse_corpus_bytes, write_corpus};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(instances) = parse_corpus_bytes(data) {
        if let Ok(text) = write_corpus(&instances) {
            assert_eq!(parse_corpus_bytes(text.as_bytes()).unwrap(), instances);
        }
    }
});
