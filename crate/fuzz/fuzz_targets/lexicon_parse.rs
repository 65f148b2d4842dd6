#![no_main]

use crm_core::lexicon::{parse_lexicon_bytes, serialize_lexicon};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(lex) = parse_lexicon_bytes(data) {
        let text = serialize_lexicon(&lex.entries);
        let again = parse_lexicon_bytes(text.as_bytes()).expect("serialized lexicon parses");
        assert_eq!(again.entries, lex.entries);
    }
});
