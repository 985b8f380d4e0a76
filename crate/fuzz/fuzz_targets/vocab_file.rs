#![no_main]

use libfuzzer_sys::fuzz_target;
use origami::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(vocab) = Vocabulary::from_text(text) {
        let again = Vocabulary::from_text(&vocab.to_text()).expect("written vocabulary parses");
        assert_eq!(again, vocab);
    }
});
