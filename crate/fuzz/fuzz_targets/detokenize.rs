#![no_main]

use libfuzzer_sys::fuzz_target;
use origami::{accepts, detokenize, tokenize, Token};
use origami_fuzz::tokens_from_bytes;

fuzz_target!(|data: &[u8]| {
    let tokens = tokens_from_bytes(data);
    let decoded = detokenize(&tokens);
    assert_eq!(accepts(&tokens), decoded.is_ok());
    if let Ok(doc) = decoded {
        // trailing padding is accepted and dropped
        let end = tokens.iter().rposition(|t| *t != Token::Pad).map_or(0, |i| i + 1);
        assert_eq!(tokenize(&doc).expect("decoded document tokenizes"), tokens[..end]);
    }
});
