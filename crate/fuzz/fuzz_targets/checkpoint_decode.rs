#![no_main]

use crm_core::model::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        // Anything accepted must survive a round trip unchanged.
        let bytes = ckpt.encode().expect("decoded checkpoints re-encode");
        let again = Checkpoint::decode(&bytes).expect("re-encoded checkpoints decode");
        assert_eq!(again.encode().unwrap(), bytes);
    }
});
