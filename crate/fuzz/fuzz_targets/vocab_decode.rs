#![no_main]

use libfuzzer_sys::fuzz_target;
use origami::{parse_json, tokenize, TokenId, Vocabulary};

fuzz_target!(|data: &[u8]| {
    let doc = parse_json(r#"{"a": [1, "x"], "b": {"c": null}}"#).expect("fixed document");
    let vocab = Vocabulary::build(std::slice::from_ref(&doc), None).expect("vocabulary");
    let ids: Vec<TokenId> = data.iter().map(|&b| b as TokenId).collect();
    if let Ok(tokens) = vocab.decode(&ids) {
        assert_eq!(vocab.encode_unpadded(&tokens), ids);
    }
    let tokens = tokenize(&doc).expect("tokenizes");
    assert_eq!(vocab.decode(&vocab.encode_unpadded(&tokens)).expect("decodes"), tokens);
});
