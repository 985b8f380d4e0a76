#![no_main]

use libfuzzer_sys::fuzz_target;
use origami::model::Checkpoint;
use origami_fuzz::three_parts;

fuzz_target!(|data: &[u8]| {
    let (manifest, vocab, weights) = three_parts(data);
    let (Ok(manifest), Ok(vocab)) = (std::str::from_utf8(manifest), std::str::from_utf8(vocab)) else { return };
    if let Ok(ck) = Checkpoint::from_parts(manifest, weights, vocab) {
        let again = Checkpoint::from_parts(&ck.manifest().to_text(), &ck.weights_bytes(), &ck.vocab.to_text())
            .expect("written checkpoint loads");
        assert_eq!(again, ck);
    }
});
