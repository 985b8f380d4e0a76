//! Acceptance criteria, one line of output per criterion.
//!
//! Criteria 6 and 7 are skipped unless run with `--include-ignored` /
//! `--ignored` or selected by number:
//! `cargo test --release --test acceptance -- 6 7`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use origami::automaton::GrammarMasks;
use origami::datagen::{generate_dungeons, DungeonsConfig, DUNGEONS_TARGET};
use origami::document::to_jsonl;
use origami::encoding::{kvpe, stack_symbol_ids};
use origami::experiment::{plan, run_plan, ExperimentReport, Overrides, Preset};
use origami::inference::Classification;
use origami::metrics::{micro_prf, MetricsReport, Task};
use origami::model::{
    load_checkpoint, masked_cross_entropy, masked_distribution, save_checkpoint, BatchInput, HeadRows, Model,
};
use origami::pipeline::{encode_corpus, shuffle_document, Batch};
use origami::tokenizer::{CanonicalFloat, Primitive};
use origami::training::{probe_input, small_config, train, TrainConfig, Trainer};
use origami::{
    accepts, detokenize, stack_trace, tokenize, Document, ModelConfig, PositionEncodingKind, Token, TokenId, Vocabulary,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- documents

const KEY_POOL: [&str; 10] = ["a", "b", "name", "id", "x y", "k\"q", "\u{e9}t\u{e9}", "tags", "v", "deep"];

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const CHARS: [char; 10] = ['a', 'z', ' ', '"', '\\', '\n', '\u{1}', '\u{e9}', '\u{1f600}', '/'];
    let len = rng.random_range(0..6);
    (0..len).map(|_| CHARS[rng.random_range(0..CHARS.len())]).collect()
}

fn random_value(rng: &mut ChaCha8Rng, depth: usize) -> Document {
    let containers = depth < 6;
    match rng.random_range(0..if containers { 8 } else { 6 }) {
        0 => Document::Null,
        1 => Document::Bool(rng.random()),
        2 => Document::Int(rng.random_range(-1000..1000) * if rng.random_bool(0.1) { 1 << 40 } else { 1 }),
        3 => Document::Float(rng.random_range(-1e6..1e6) / 10f64.powi(rng.random_range(0..12))),
        4 | 5 => Document::Str(random_string(rng)),
        6 => Document::Array((0..rng.random_range(0..=8)).map(|_| random_value(rng, depth + 1)).collect()),
        _ => random_object(rng, depth + 1),
    }
}

/// Object at nesting level `depth` (top level is 1) with up to 8 members.
fn random_object(rng: &mut ChaCha8Rng, depth: usize) -> Document {
    let n = rng.random_range(0..=8);
    let mut members: Vec<(String, Document)> = Vec::new();
    for _ in 0..n {
        let key = if rng.random_bool(0.8) { KEY_POOL[rng.random_range(0..KEY_POOL.len())].to_string() } else { random_string(rng) };
        if members.iter().all(|(k, _)| *k != key) {
            let v = random_value(rng, depth);
            members.push((key, v));
        }
    }
    Document::Object(members)
}

fn random_documents(n: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_object(&mut rng, 1)).collect()
}

fn depth_of(doc: &Document) -> usize {
    match doc {
        Document::Object(m) => 1 + m.iter().map(|(_, v)| depth_of(v)).max().unwrap_or(0),
        Document::Array(items) => 1 + items.iter().map(depth_of).max().unwrap_or(0),
        _ => 0,
    }
}

// ---------------------------------------------------------------- criteria

fn criterion_1() -> Outcome {
    let docs = random_documents(1000, 1);
    check(docs.iter().all(|d| depth_of(d) <= 6), || "generator exceeded depth 6".into())?;
    let mut tokens_total = 0;
    for (i, doc) in docs.iter().enumerate() {
        let tokens = tokenize(doc).map_err(|e| format!("doc {i}: {e}"))?;
        tokens_total += tokens.len();
        let back = detokenize(&tokens).map_err(|e| format!("doc {i}: {e}"))?;
        check(&back == doc, || format!("doc {i} changed in round trip"))?;
    }
    let vocab = Vocabulary::build(&docs, None).map_err(|e| e.to_string())?;
    for id in 0..vocab.len() as TokenId {
        let tok = vocab.token(id).unwrap();
        check(vocab.id(tok) == Some(id), || format!("id {id} not bijective"))?;
    }
    for doc in &docs {
        let tokens = tokenize(doc).unwrap();
        check(vocab.decode(&vocab.encode_unpadded(&tokens)).unwrap() == tokens, || "encode/decode mismatch".into())?;
    }
    let capped = Vocabulary::build(&docs, Some(vocab.len() / 2)).map_err(|e| e.to_string())?;
    let mut retained = 0usize;
    for doc in &docs {
        let tokens = tokenize(doc).unwrap();
        let decoded = capped.decode(&capped.encode_unpadded(&tokens)).unwrap();
        for (t, d) in tokens.iter().zip(&decoded) {
            if capped.id(t).is_some() {
                retained += 1;
                check(t == d, || format!("retained token {t} decoded as {d}"))?;
            } else {
                check(*d == Token::Unknown, || format!("dropped token {t} decoded as {d}"))?;
            }
        }
    }
    Ok(format!(
        "1000 documents, {tokens_total} tokens round-trip; bijection over {} ids; {retained} tokens retained by a {}-entry vocabulary",
        vocab.len(),
        capped.len()
    ))
}

fn random_token(rng: &mut ChaCha8Rng) -> Token {
    match rng.random_range(0..13) {
        0 => Token::Start,
        1 => Token::End,
        2 => Token::ObjStart,
        3 => Token::ObjEnd,
        4 => Token::Obj,
        5 => Token::Unknown,
        6 => Token::Pad,
        7 => Token::Array(rng.random_range(0..=8)),
        8 | 9 => Token::Key(KEY_POOL[rng.random_range(0..KEY_POOL.len())].to_string()),
        10 => Token::Value(Primitive::Int(rng.random_range(-5..5))),
        11 => Token::Value(Primitive::Float(CanonicalFloat::new(0.5).unwrap())),
        _ => Token::Value(Primitive::Str(random_string(rng))),
    }
}

fn criterion_2() -> Outcome {
    let docs = random_documents(1000, 1);
    for (i, doc) in docs.iter().enumerate() {
        check(accepts(&tokenize(doc).unwrap()), || format!("doc {i} rejected"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut accepted, mut rejected) = (0, 0);
    for trial in 0..10_000 {
        let mut tokens = tokenize(&docs[rng.random_range(0..docs.len())]).unwrap();
        match rng.random_range(0..3) {
            0 => {
                let at = rng.random_range(0..tokens.len());
                tokens[at] = random_token(&mut rng);
            }
            1 => {
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, random_token(&mut rng));
            }
            _ => {
                let at = rng.random_range(0..tokens.len());
                tokens.remove(at);
            }
        }
        let ok = accepts(&tokens);
        check(ok == detokenize(&tokens).is_ok(), || format!("corruption {trial}: accepts={ok} disagrees with detokenize"))?;
        if ok {
            accepted += 1;
        } else {
            rejected += 1;
        }
    }
    Ok(format!("1000 originals accepted; 10000 corruptions agree ({accepted} accepted, {rejected} rejected)"))
}

/// Labels each token by its location in the tree, in emission order.
fn location_labels(doc: &Document) -> Vec<String> {
    fn value(v: &Document, path: &str, out: &mut Vec<String>) {
        match v {
            Document::Object(m) => {
                out.push(format!("{path}#open"));
                members(m, path, out);
                out.push(format!("{path}#close"));
            }
            Document::Array(items) => {
                out.push(format!("{path}#array"));
                for (i, item) in items.iter().enumerate() {
                    value(item, &format!("{path}[{i}]"), out);
                }
            }
            _ => out.push(format!("{path}#value")),
        }
    }
    fn members(m: &[(String, Document)], path: &str, out: &mut Vec<String>) {
        for (k, v) in m {
            let p = format!("{path}/{k:?}");
            out.push(format!("{p}#key"));
            value(v, &p, out);
        }
    }
    let Document::Object(m) = doc else { panic!("not an object") };
    let mut out = vec!["#start".to_string()];
    members(m, "", &mut out);
    out.push("#end".into());
    out
}

fn criterion_3() -> Outcome {
    let docs = random_documents(200, 3);
    let dim = 8;
    let mut compared = 0usize;
    for (i, doc) in docs.iter().enumerate() {
        let permuted = shuffle_document(doc, 1000 + i as u64);
        let vocab = Vocabulary::build([doc, &permuted], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let table: Vec<f32> = (0..vocab.len() * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let encode = |d: &Document| {
            let tokens = tokenize(d).unwrap();
            let ids = stack_symbol_ids(&stack_trace(&tokens).unwrap(), &vocab);
            let pe = kvpe(&ids, &table, dim).unwrap();
            let labels = location_labels(d);
            assert_eq!(labels.len(), tokens.len(), "label walker out of step with tokenizer");
            labels.into_iter().zip(pe.chunks(dim).map(|c| c.iter().map(|x| x.to_bits()).collect::<Vec<u32>>())).collect::<Vec<_>>()
        };
        let a = encode(doc);
        let mut b = encode(&permuted);
        b.sort();
        for (label, bits) in &a {
            let j = b.binary_search_by(|(l, _)| l.cmp(label)).map_err(|_| format!("doc {i}: {label} missing after permutation"))?;
            check(&b[j].1 == bits, || format!("doc {i}: kvpe differs at {label}"))?;
            compared += 1;
        }
    }
    Ok(format!("200 permuted pairs, {compared} corresponding tokens bitwise identical"))
}

/// Independent grammar oracle: whether `next` may follow `prefix`.
fn oracle_allows(prefix: &[Token], next: &Token) -> bool {
    enum Frame {
        Object { awaiting_value: bool },
        Array(usize),
    }
    let mut started = false;
    let mut ended = false;
    let mut stack: Vec<Frame> = Vec::new();
    for tok in prefix {
        if !started {
            started = true;
            stack.push(Frame::Object { awaiting_value: false });
            continue;
        }
        if ended {
            continue;
        }
        let value_slot = matches!(stack.last(), Some(Frame::Object { awaiting_value: true }) | Some(Frame::Array(_)));
        if value_slot {
            match tok {
                Token::ObjStart => stack.push(Frame::Object { awaiting_value: false }),
                Token::Array(n) => stack.push(Frame::Array(*n)),
                _ => {}
            }
            if !matches!(tok, Token::ObjStart) {
                complete_values(&mut stack, matches!(tok, Token::Array(_)));
            }
        } else {
            match tok {
                Token::Key(_) => {
                    if let Some(Frame::Object { awaiting_value }) = stack.last_mut() {
                        *awaiting_value = true;
                    }
                }
                Token::ObjEnd => {
                    stack.pop();
                    complete_values(&mut stack, false);
                }
                Token::End => ended = true,
                _ => {}
            }
        }
    }

    /// After a value: pops finished arrays and marks the parent slot filled.
    /// `opened_array` means the value was an array header that still needs
    /// its elements unless it is empty.
    fn complete_values(stack: &mut Vec<Frame>, opened_array: bool) {
        if opened_array {
            match stack.last() {
                Some(Frame::Array(0)) => {
                    stack.pop();
                }
                _ => return,
            }
        }
        loop {
            match stack.last_mut() {
                Some(Frame::Object { awaiting_value }) => {
                    *awaiting_value = false;
                    return;
                }
                Some(Frame::Array(remaining)) => {
                    *remaining -= 1;
                    if *remaining > 0 {
                        return;
                    }
                    stack.pop();
                }
                None => return,
            }
        }
    }

    if !started {
        return *next == Token::Start;
    }
    if ended {
        return *next == Token::Pad;
    }
    match stack.last() {
        Some(Frame::Object { awaiting_value: true }) | Some(Frame::Array(_)) => {
            matches!(next, Token::Value(_) | Token::Array(_) | Token::ObjStart | Token::Unknown)
        }
        Some(Frame::Object { awaiting_value: false }) => match next {
            Token::Key(_) => true,
            Token::End => stack.len() == 1,
            Token::ObjEnd => stack.len() > 1,
            _ => false,
        },
        None => false,
    }
}

fn criterion_4() -> Outcome {
    let docs = generate_dungeons(&DungeonsConfig::hard(300, 4)).map_err(|e| e.to_string())?;
    let mut config = small_config(32, 4, 2, 160, PositionEncodingKind::KeyValue);
    config.steps = 100;
    config.batch_size = 20;
    config.upscale = 2;
    let mut trainer = Trainer::new(&docs, &config).map_err(|e| e.to_string())?;
    let masks = GrammarMasks::new(&trainer.vocab);
    let vocab = trainer.vocab.clone();
    let v = vocab.len();
    let mut rows = 0usize;
    let mut failure: Option<String> = None;
    for step in 0..100 {
        trainer
            .step_inspect(|batch: &Batch, logits: &[f32]| {
                if failure.is_some() || !batch.guardrails {
                    failure.get_or_insert_with(|| "guardrails off".into());
                    return;
                }
                for s in 0..batch.sequences() {
                    let range = batch.input.sequence(s);
                    let tokens: Vec<Token> = batch.input.ids[range.clone()].iter().map(|&id| vocab.token(id).unwrap().clone()).collect();
                    for (offset, row) in range.enumerate() {
                        let Some(target) = batch.targets[row] else { continue };
                        let mask = masks.mask(batch.valid[row]);
                        let p = masked_distribution(&logits[row * v..(row + 1) * v], mask).unwrap();
                        let prefix = &tokens[..=offset];
                        for (j, tok) in vocab.tokens().iter().enumerate() {
                            let allowed = oracle_allows(prefix, tok);
                            if allowed != mask[j] {
                                failure = Some(format!("step {step}: mask disagrees with oracle on {tok} after {} tokens", prefix.len()));
                                return;
                            }
                            if !allowed && p[j] != 0.0 {
                                failure = Some(format!("step {step}: invalid {tok} has probability {}", p[j]));
                                return;
                            }
                        }
                        if !mask[target as usize] || p[target as usize] <= 0.0 {
                            failure = Some(format!("step {step}: true next token masked"));
                            return;
                        }
                        rows += 1;
                    }
                }
            })
            .map_err(|e| e.to_string())?;
        if let Some(f) = failure.take() {
            return Err(f);
        }
    }
    Ok(format!("100 steps, {rows} rows: invalid tokens exactly 0, true next token never masked, masks equal the oracle"))
}

/// Smallest denominator of the relative error.
const GRAD_FLOOR: f64 = 1e-5;

fn criterion_5() -> Outcome {
    let docs = generate_dungeons(&DungeonsConfig::easy(4, 5)).map_err(|e| e.to_string())?;
    let vocab = Vocabulary::build(&docs, None).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        d_model: 16,
        heads: 2,
        layers: 2,
        max_len: 160,
        vocab_size: vocab.len(),
        pe_kind: PositionEncodingKind::KeyValue,
        dropout: 0.0,
        seed: 5,
    };
    let mut model = Model::<f64>::new(config).map_err(|e| e.to_string())?;
    // 10x the initial weight scale.
    for p in model.params.iter_mut() {
        *p *= 10.0;
    }
    let (seqs, _) = encode_corpus(&docs[..2], &vocab, 160).map_err(|e| e.to_string())?;
    let batch = Batch::from_sequences(&seqs, true);
    let masks = GrammarMasks::new(&vocab);
    let row_masks: Vec<&[bool]> = batch.loss_sets().map(|s| masks.mask(s)).collect();
    let loss_of = |m: &Model<f64>| {
        let pass = m.forward(&batch.input, HeadRows::All, None, false).unwrap();
        masked_cross_entropy(&pass.logits, vocab.len(), &batch.targets, &row_masks).unwrap().loss
    };
    let pass = model.forward(&batch.input, HeadRows::All, None, true).map_err(|e| e.to_string())?;
    let out = masked_cross_entropy(&pass.logits, vocab.len(), &batch.targets, &row_masks).map_err(|e| e.to_string())?;
    let grads = model.backward(&batch.input, &pass, &out.dlogits);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = model.params.len();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let samples = 256;
    for _ in 0..samples {
        let i = rng.random_range(0..n);
        let orig = model.params[i];
        model.params[i] = orig + eps;
        let up = loss_of(&model);
        model.params[i] = orig - eps;
        let down = loss_of(&model);
        model.params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(rel);
        check(rel < 1e-4, || format!("parameter {i}: analytic {} numeric {numeric} rel {rel:e}", grads[i]))?;
    }
    Ok(format!("{samples} of {n} parameters, worst relative error {worst:.2e}"))
}

fn print_report(report: &ExperimentReport) {
    for a in report.aggregates() {
        println!("    {} {} n={} mean={:.4} std={:.4}", a.condition, a.metric, a.n, a.mean, a.std);
    }
}

fn criterion_6() -> Outcome {
    let p = plan(Preset::DungeonsPe, &Overrides::default()).map_err(|e| e.to_string())?;
    let seeds = [0, 1, 2, 3, 4];
    let report = run_plan(&p, &seeds, &mut |_, _, _| {}).map_err(|e| e.to_string())?;
    print_report(&report);
    let finals = |cond: &str, f: fn(&origami::training::EvalRecord) -> Option<f64>| -> Vec<f64> {
        report.runs_of(cond).filter_map(|r| f(&r.last)).collect()
    };
    let kvpe = finals("kvpe", |r| r.test_accuracy);
    let solved = kvpe.iter().filter(|&&a| a >= 0.99).count();
    check(solved >= 4, || format!("kvpe test accuracy >= 0.99 on {solved} of 5 seeds ({kvpe:?})"))?;
    let mut notes = vec![format!("kvpe solved {solved}/5")];
    for cond in ["absolute", "sinusoidal", "none"] {
        let train = finals(cond, |r| r.train_accuracy);
        let test = finals(cond, |r| r.test_accuracy);
        let (tr, te) = (mean(&train), mean(&test));
        check(tr >= 0.95 && te <= 0.60, || format!("{cond}: train {tr:.3}, test {te:.3}"))?;
        notes.push(format!("{cond} train {tr:.3} test {te:.3}"));
    }
    Ok(notes.join(", "))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7() -> Outcome {
    let p = plan(Preset::Guardrails, &Overrides::default()).map_err(|e| e.to_string())?;
    let budget = p.conditions[0].config.steps as f64;
    let report = run_plan(&p, &[0, 1, 2, 3, 4], &mut |_, _, _| {}).map_err(|e| e.to_string())?;
    print_report(&report);
    let steps = |cond: &str| -> Vec<Option<usize>> { report.runs_of(cond).map(|r| r.n_success).collect() };
    let with = steps("guardrails");
    let without = steps("no-guardrails");
    check(with.iter().all(Option::is_some), || format!("a guarded run never reached accuracy 1.0: {with:?}"))?;
    // A run that never succeeds counts as the full budget.
    let m_with = mean(&with.iter().map(|s| s.map_or(budget, |v| v as f64)).collect::<Vec<_>>());
    let m_without = mean(&without.iter().map(|s| s.map_or(budget, |v| v as f64)).collect::<Vec<_>>());
    let reduction = 1.0 - m_with / m_without;
    check(reduction >= 0.15, || format!("mean n_success {m_with} vs {m_without}: reduction {:.1}%", 100.0 * reduction))?;
    Ok(format!("mean n_success {m_with} with vs {m_without} without guardrails ({:.1}% fewer steps)", 100.0 * reduction))
}

fn criterion_8() -> Outcome {
    let overrides = Overrides { conditions: Some(vec!["ordered".into(), "x100".into()]), ..Overrides::default() };
    let p = plan(Preset::Upscaling, &overrides).map_err(|e| e.to_string())?;
    check(p.train.len() + p.test.len() == 700, || "corpus is not 700 instances".into())?;
    let report = run_plan(&p, &[0, 1, 2, 3, 4], &mut |_, _, _| {}).map_err(|e| e.to_string())?;
    print_report(&report);
    let gap = |c: &str| mean(&report.runs_of(c).map(|r| r.loss_gap().unwrap()).collect::<Vec<_>>());
    let acc = |c: &str| mean(&report.runs_of(c).map(|r| r.last.test_accuracy.unwrap()).collect::<Vec<_>>());
    let (g1, g100) = (gap("ordered"), gap("x100"));
    let (a1, a100) = (acc("ordered"), acc("x100"));
    check(g100 < g1, || format!("loss gap x100 {g100:.4} not below ordered {g1:.4}"))?;
    check(a100 >= a1, || format!("test accuracy x100 {a100:.4} below ordered {a1:.4}"))?;
    Ok(format!("loss gap {g100:.4} (x100) < {g1:.4} (ordered); test accuracy {a100:.4} >= {a1:.4}"))
}

fn criterion_9() -> Outcome {
    let docs = generate_dungeons(&DungeonsConfig::hard(10, 11)).map_err(|e| e.to_string())?;
    let mut config = small_config(32, 4, 2, 160, PositionEncodingKind::KeyValue);
    config.steps = 500;
    config.batch_size = 10;
    config.shuffle = false;
    config.learning_rate = 3e-3;
    config.eval_every = 500;
    let out = train(&docs, &[], &config, &mut |_| {}).map_err(|e| e.to_string())?;
    let loss = out.log.entries.last().unwrap().train_loss;
    check(loss < 0.05, || format!("memorization loss {loss}"))?;

    let set = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
    // (truths, predictions, precision, recall, f1), computed by hand.
    type Case<'a> = (&'a [&'a [&'a str]], &'a [&'a [&'a str]], f64, f64, f64);
    let cases: [Case; 10] = [
        (&[&["A", "B"]], &[&["A"]], 1.0, 0.5, 2.0 / 3.0),
        (&[&["A"]], &[&["A"]], 1.0, 1.0, 1.0),
        (&[&["A"]], &[&["B"]], 0.0, 0.0, 0.0),
        (&[&[]], &[&[]], 0.0, 0.0, 0.0),
        (&[&["A", "B"], &["C"]], &[&["A"], &["C", "D"]], 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0),
        (&[&["A", "B", "C"]], &[&["A", "B", "C", "D"]], 0.75, 1.0, 6.0 / 7.0),
        (&[&["A"], &["B"]], &[&[], &[]], 0.0, 0.0, 0.0),
        (&[&["A"], &["A"]], &[&["A"], &["B"]], 0.5, 0.5, 0.5),
        (&[&["A", "B"]], &[&["C", "D"]], 0.0, 0.0, 0.0),
        (&[&["A", "B"], &["A", "B"], &["A"]], &[&["A"], &["B"], &["A"]], 1.0, 0.6, 0.75),
    ];
    for (i, (truths, preds, p, r, f)) in cases.iter().enumerate() {
        let pairs: Vec<_> = truths.iter().zip(preds.iter()).map(|(t, q)| (set(t), set(q))).collect();
        let m = micro_prf(&pairs);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        check(close(m.precision, *p) && close(m.recall, *r) && close(m.f1, *f), || format!("micro case {i}: got {m:?}"))?;
    }
    let labels = |v: &[&str]| Document::Array(v.iter().map(|s| Document::Str(s.to_string())).collect());
    let results = [
        Classification { truth: labels(&["A", "B"]), prediction: Some(labels(&["B", "A"])), error: None, correct: true },
        Classification { truth: labels(&["A"]), prediction: None, error: None, correct: false },
    ];
    let report = MetricsReport::from_classifications(&results, Task::Multi);
    let micro = report.micro.unwrap();
    check(report.accuracy == 0.5 && report.discarded == 1, || format!("report {report:?}"))?;
    check((micro.precision - 1.0).abs() < 1e-12 && (micro.recall - 2.0 / 3.0).abs() < 1e-12, || format!("report micro {micro:?}"))?;
    Ok(format!("memorization loss {loss:.4} < 0.05 after 500 steps; 10 micro-averaged cases and a report match hand values"))
}

fn criterion_10() -> Outcome {
    let config = DungeonsConfig::hard(200, 10);
    let a = to_jsonl(&generate_dungeons(&config).unwrap());
    let b = to_jsonl(&generate_dungeons(&config).unwrap());
    check(a == b, || "dungeons JSONL differs".into())?;
    let docs = generate_dungeons(&config).unwrap();
    let v1 = Vocabulary::build(&docs, None).unwrap().to_text();
    let v2 = Vocabulary::build(&docs, None).unwrap().to_text();
    check(v1 == v2, || "vocabulary files differ".into())?;

    let mut tc: TrainConfig = small_config(16, 2, 2, 160, PositionEncodingKind::KeyValue);
    tc.steps = 20;
    tc.batch_size = 10;
    tc.upscale = 3;
    tc.model.dropout = 0.1;
    tc.target = Some(DUNGEONS_TARGET.into());
    tc.eval_every = 10;
    let (train_docs, test_docs) = docs.split_at(150);
    let r1 = train(train_docs, test_docs, &tc, &mut |_| {}).map_err(|e| e.to_string())?;
    let r2 = train(train_docs, test_docs, &tc, &mut |_| {}).map_err(|e| e.to_string())?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    save_checkpoint(dirs[0].path(), &r1.checkpoint).map_err(|e| e.to_string())?;
    save_checkpoint(dirs[1].path(), &r2.checkpoint).map_err(|e| e.to_string())?;
    for name in ["manifest.txt", "weights.bin", "vocab.txt"] {
        let x = std::fs::read(dirs[0].path().join(name)).unwrap();
        let y = std::fs::read(dirs[1].path().join(name)).unwrap();
        check(x == y, || format!("{name} differs between identical runs"))?;
    }
    check(r1.log == r2.log, || "metrics logs differ".into())?;

    let loaded = load_checkpoint(dirs[0].path()).map_err(|e| e.to_string())?;
    let mut probe = BatchInput::new();
    for doc in &test_docs[..8] {
        let single = probe_input(doc, &loaded.vocab).map_err(|e| e.to_string())?;
        probe.push(&single.ids, &single.symbols);
    }
    let before = r1.checkpoint.model.forward(&probe, HeadRows::All, None, false).unwrap().logits;
    let after = loaded.model.forward(&probe, HeadRows::All, None, false).unwrap().logits;
    let same = before.len() == after.len() && before.iter().zip(&after).all(|(x, y)| x.to_bits() == y.to_bits());
    check(same, || "reloaded logits differ".into())?;
    Ok(format!("JSONL, vocabulary and checkpoint files byte-identical; {} reloaded logits bit-identical", after.len()))
}

// ---------------------------------------------------------------- runner

struct Criterion {
    number: usize,
    name: &'static str,
    long: bool,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { number: 1, name: "round-trip reversibility", long: false, run: criterion_1 },
    Criterion { number: 2, name: "automaton soundness and completeness", long: false, run: criterion_2 },
    Criterion { number: 3, name: "kvpe order invariance", long: false, run: criterion_3 },
    Criterion { number: 4, name: "mask correctness during training", long: false, run: criterion_4 },
    Criterion { number: 5, name: "gradient check", long: false, run: criterion_5 },
    Criterion { number: 6, name: "dungeons-hard generalization by position encoding", long: true, run: criterion_6 },
    Criterion { number: 7, name: "guardrails convergence on dungeons-easy", long: true, run: criterion_7 },
    Criterion { number: 8, name: "upscaling regularization", long: false, run: criterion_8 },
    Criterion { number: 9, name: "memorization smoke and metric oracles", long: false, run: criterion_9 },
    Criterion { number: 10, name: "determinism and persistence", long: false, run: criterion_10 },
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let include_long = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if args.iter().any(|a| a == "--list") {
        for c in &CRITERIA {
            println!("criterion_{}: test", c.number);
        }
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for c in &CRITERIA {
        if !selected.is_empty() && !selected.contains(&c.number) {
            continue;
        }
        if c.long && selected.is_empty() && !include_long {
            println!("criterion {:>2} {}: SKIPPED (long-running; select it by number or pass --include-ignored)", c.number, c.name);
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {}: PASS ({detail}) [{secs:.1}s]", c.number, c.name),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {}: FAIL ({why}) [{secs:.1}s]", c.number, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
