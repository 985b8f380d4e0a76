#![no_main]

use std::collections::HashMap;

use libfuzzer_sys::fuzz_target;
use origami::datagen::csv_to_documents;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(docs) = csv_to_documents(text, &HashMap::new()) {
        assert!(docs.iter().all(|d| d.is_object()));
    }
});
