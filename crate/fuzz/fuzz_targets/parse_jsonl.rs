#![no_main]

use libfuzzer_sys::fuzz_target;
use origami::document::{parse_jsonl, to_jsonl};
use origami::OnError;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let strict = parse_jsonl(text, OnError::FailFast);
    let lenient = parse_jsonl(text, OnError::Skip).expect("skipping never fails");
    if let Ok(corpus) = strict {
        assert!(lenient.skipped.is_empty());
        assert_eq!(corpus.documents, lenient.documents);
    }
    let again = parse_jsonl(&to_jsonl(&lenient.documents), OnError::FailFast).expect("written corpus parses");
    assert_eq!(again.documents, lenient.documents);
});
