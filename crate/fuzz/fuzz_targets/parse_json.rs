#![no_main]

use libfuzzer_sys::fuzz_target;
use origami::{detokenize, parse_json, serialize_json, tokenize};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(doc) = parse_json(text) else { return };
    let again = parse_json(&serialize_json(&doc)).expect("serialized output parses");
    assert_eq!(again, doc);
    if let Ok(tokens) = tokenize(&doc) {
        assert_eq!(detokenize(&tokens).expect("tokens detokenize"), doc);
    }
});
