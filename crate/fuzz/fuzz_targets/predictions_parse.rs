#![no_main]

use crm_core::consistency::PredictionSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(preds) = PredictionSet::from_bytes(data) {
        let again = PredictionSet::from_jsonl(&preds.to_jsonl()).expect("written predictions parse");
        assert_eq!(again.records(), preds.records());
    }
});
