use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use origami::automaton::GrammarMasks;
use origami::document::{parse_jsonl, to_jsonl};
use origami::kv::KvFile;
use origami::metrics::{micro_prf, samples_prf};
use origami::model::masked_distribution;
use origami::pipeline::{encode_corpus, pin_last, shuffle_document, split, upscale, Batch, UpscaleOptions};
use origami::{accepts, detokenize, parse_json, serialize_json, tokenize, Document, OnError, Vocabulary};

fn leaf() -> impl Strategy<Value = Document> {
    prop_oneof![
        Just(Document::Null),
        any::<bool>().prop_map(Document::Bool),
        any::<i64>().prop_map(Document::Int),
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(Document::Float),
        "[a-z\\u{e9}\"\\\\ \\n]{0,6}".prop_map(Document::Str),
    ]
}

fn object_of(inner: impl Strategy<Value = Document>) -> impl Strategy<Value = Document> {
    prop::collection::btree_map("[a-e]{1,2}", inner, 0..5).prop_map(|m: BTreeMap<String, Document>| Document::Object(m.into_iter().collect()))
}

fn value() -> impl Strategy<Value = Document> {
    leaf().prop_recursive(4, 40, 5, |inner| {
        prop_oneof![prop::collection::vec(inner.clone(), 0..4).prop_map(Document::Array), object_of(inner)]
    })
}

fn document() -> impl Strategy<Value = Document> {
    object_of(value())
}

/// Objects with members sorted by key, recursively.
fn sorted(doc: &Document) -> Document {
    match doc {
        Document::Object(members) => {
            let mut m: Vec<_> = members.iter().map(|(k, v)| (k.clone(), sorted(v))).collect();
            m.sort_by(|a, b| a.0.cmp(&b.0));
            Document::Object(m)
        }
        Document::Array(items) => Document::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

proptest! {
    #[test]
    fn tokenize_roundtrip(doc in document()) {
        let tokens = tokenize(&doc).unwrap();
        prop_assert!(accepts(&tokens));
        prop_assert_eq!(detokenize(&tokens).unwrap(), doc);
    }

    #[test]
    fn serialize_roundtrip(doc in document()) {
        prop_assert_eq!(parse_json(&serialize_json(&doc)).unwrap(), doc);
    }

    #[test]
    fn jsonl_roundtrip(docs in prop::collection::vec(document(), 0..5)) {
        prop_assert_eq!(parse_jsonl(&to_jsonl(&docs), OnError::FailFast).unwrap().documents, docs);
    }

    #[test]
    fn truncated_sequences_rejected(doc in document(), cut in 0usize..1000) {
        let tokens = tokenize(&doc).unwrap();
        let cut = cut % tokens.len();
        prop_assert!(!accepts(&tokens[..cut]));
        prop_assert!(detokenize(&tokens[..cut]).is_err());
    }

    #[test]
    fn shuffling_preserves_content(doc in document(), seed in any::<u64>()) {
        let shuffled = shuffle_document(&doc, seed);
        prop_assert_eq!(sorted(&shuffled), sorted(&doc));
        prop_assert_eq!(tokenize(&shuffled).unwrap().len(), tokenize(&doc).unwrap().len());
    }

    #[test]
    fn pinned_key_stays_last(doc in document(), seed in any::<u64>()) {
        let mut doc = doc;
        if let Document::Object(m) = &mut doc {
            m.retain(|(k, _)| k != "zz");
            m.insert(0, ("zz".into(), Document::Int(1)));
        }
        let copies = upscale(&[doc], &UpscaleOptions { factor: 3, shuffle: true, pin_last: Some("zz".into()) }, seed).unwrap();
        prop_assert_eq!(copies.len(), 3);
        for c in &copies {
            let Document::Object(m) = c else { unreachable!() };
            prop_assert_eq!(m.last().unwrap().0.as_str(), "zz");
        }
        let mut moved = copies[0].clone();
        pin_last(&mut moved, "zz");
        prop_assert_eq!(&moved, &copies[0]);
    }

    #[test]
    fn vocabulary_bijection(docs in prop::collection::vec(document(), 1..4)) {
        let vocab = Vocabulary::build(&docs, None).unwrap();
        prop_assert_eq!(Vocabulary::from_text(&vocab.to_text()).unwrap(), vocab.clone());
        for doc in &docs {
            let tokens = tokenize(doc).unwrap();
            let ids = vocab.encode_unpadded(&tokens);
            prop_assert!(ids.iter().all(|&id| (id as usize) < vocab.len()));
            prop_assert_eq!(vocab.decode(&ids).unwrap(), tokens);
        }
    }

    #[test]
    fn split_partitions(n in 0usize..40, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let docs: Vec<Document> = (0..n).map(|i| Document::Object(vec![("i".into(), Document::Int(i as i64))])).collect();
        let Ok(parts) = split(&docs, fraction, seed) else { return Ok(()) };
        prop_assert_eq!(parts.train.len(), (fraction * n as f64).round() as usize);
        let mut all: Vec<i64> = parts.train.iter().chain(&parts.test).map(|d| d.get("i").unwrap().as_i64().unwrap()).collect();
        all.sort();
        prop_assert_eq!(all, (0..n as i64).collect::<Vec<_>>());
    }

    #[test]
    fn packed_batches_keep_every_token(docs in prop::collection::vec(document(), 1..5)) {
        let vocab = Vocabulary::build(&docs, None).unwrap();
        let (seqs, dropped) = encode_corpus(&docs, &vocab, 10_000).unwrap();
        prop_assert!(dropped.is_empty());
        let batch = Batch::from_sequences(&seqs, true);
        prop_assert_eq!(batch.input.rows(), seqs.iter().map(|s| s.len()).sum::<usize>());
        prop_assert_eq!(batch.targets.len(), batch.input.rows());
        let masks = GrammarMasks::new(&vocab);
        for (target, set) in batch.targets.iter().zip(&batch.valid) {
            if let Some(t) = target {
                prop_assert!(masks.mask(*set)[*t as usize]);
            }
        }
    }

    #[test]
    fn masked_distribution_is_normalized(
        logits in prop::collection::vec(-30.0f64..30.0, 1..20),
        bits in prop::collection::vec(any::<bool>(), 20),
    ) {
        let mut mask: Vec<bool> = bits[..logits.len()].to_vec();
        mask[0] = true;
        let p = masked_distribution(&logits, &mask).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pi, m) in p.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*pi, 0.0);
            }
        }
    }

    #[test]
    fn kv_roundtrip(entries in prop::collection::btree_map("[a-z_.]{1,8}", "[ -~&&[^#=]]{0,8}", 0..6)) {
        let mut kv = KvFile::new();
        for (k, v) in &entries {
            kv.set(k, v.trim());
        }
        prop_assert_eq!(KvFile::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn prf_bounded(pairs in prop::collection::vec((prop::collection::btree_set("[a-d]", 0..4), prop::collection::btree_set("[a-d]", 0..4)), 1..6)) {
        let pairs: Vec<(BTreeSet<String>, BTreeSet<String>)> = pairs;
        for prf in [micro_prf(&pairs), samples_prf(&pairs)] {
            for x in [prf.precision, prf.recall, prf.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
