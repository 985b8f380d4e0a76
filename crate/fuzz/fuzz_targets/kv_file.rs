#![no_main]

use libfuzzer_sys::fuzz_target;
use origami::kv::KvFile;
use origami::training::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(kv) = KvFile::parse(text) else { return };
    assert_eq!(KvFile::parse(&kv.to_text()).expect("written file parses"), kv);
    let _ = TrainConfig::default().apply_kv(&kv);
});
