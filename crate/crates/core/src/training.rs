//! Adam training loop with periodic evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automaton::{GrammarMasks, ValidSet};
use crate::document::Document;
use crate::encoding::PositionEncodingKind;
use crate::inference::{classify_all, DecodeOptions, InferenceError};
use crate::kv::{KvError, KvFile};
use crate::model::{masked_cross_entropy, masked_distribution, BatchInput, Checkpoint, HeadRows, LossError, Model, ModelConfig, ModelError};
use crate::pipeline::{encode_corpus, upscale, Batch, BatchStream, EncodedSequence, PipelineError, UpscaleOptions};
use crate::tokenizer::tokenize;
use crate::vocab::{VocabError, Vocabulary};

/// Sequences per forward pass when evaluating losses.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Architecture; `vocab_size` is replaced by the built vocabulary size
    /// and `seed` by the training seed.
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Number of optimizer steps (batches).
    pub steps: usize,
    pub guardrails: bool,
    pub eval_every: usize,
    /// Shuffled copies of each training document.
    pub upscale: usize,
    pub shuffle: bool,
    /// Keep this top-level key last in every training copy.
    pub pin_last: Option<String>,
    /// Draw a new sibling order every time a document is visited instead of
    /// materializing upscaled copies.
    pub dynamic_shuffle: bool,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub max_vocab: Option<usize>,
    /// Key predicted when measuring accuracy.
    pub target: Option<String>,
    /// Also measure accuracy on the training documents at each evaluation.
    pub eval_train_accuracy: bool,
    /// Also measure train and test loss at each evaluation.
    pub eval_loss: bool,
    /// Stop after the first evaluation with test accuracy 1.
    pub stop_when_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 100,
            learning_rate: 1e-3,
            steps: 1000,
            guardrails: true,
            eval_every: 100,
            upscale: 1,
            shuffle: true,
            pin_last: None,
            dynamic_shuffle: false,
            seed: 0,
            grad_clip: None,
            max_vocab: None,
            target: None,
            eval_train_accuracy: false,
            eval_loss: false,
            stop_when_perfect: false,
        }
    }
}

fn opt_text<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn opt_value<V: std::str::FromStr>(kv: &KvFile, key: &str) -> Result<Option<Option<V>>, KvError>
where
    V::Err: std::fmt::Display,
{
    match kv.get(key) {
        None => Ok(None),
        Some("") => Ok(Some(None)),
        Some(_) => Ok(Some(kv.parse_value(key)?)),
    }
}

impl TrainConfig {
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("d_model", self.model.d_model);
        kv.set("heads", self.model.heads);
        kv.set("layers", self.model.layers);
        kv.set("max_len", self.model.max_len);
        kv.set("pe_kind", self.model.pe_kind);
        kv.set("dropout", self.model.dropout);
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.learning_rate);
        kv.set("steps", self.steps);
        kv.set("guardrails", self.guardrails);
        kv.set("eval_every", self.eval_every);
        kv.set("upscale", self.upscale);
        kv.set("shuffle", self.shuffle);
        kv.set("pin_last", opt_text(&self.pin_last));
        kv.set("dynamic_shuffle", self.dynamic_shuffle);
        kv.set("seed", self.seed);
        kv.set("grad_clip", opt_text(&self.grad_clip));
        kv.set("max_vocab", opt_text(&self.max_vocab));
        kv.set("target", opt_text(&self.target));
        kv.set("eval_train_accuracy", self.eval_train_accuracy);
        kv.set("eval_loss", self.eval_loss);
        kv.set("stop_when_perfect", self.stop_when_perfect);
        kv
    }

    /// Overrides every field present in `kv`; an empty value clears an
    /// optional field.
    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<(), KvError> {
        const KNOWN: [&str; 22] = [
            "d_model", "heads", "layers", "max_len", "pe_kind", "dropout", "batch_size", "learning_rate", "steps",
            "guardrails", "eval_every", "upscale", "shuffle", "pin_last", "dynamic_shuffle", "seed", "grad_clip",
            "max_vocab", "target", "eval_train_accuracy", "eval_loss", "stop_when_perfect",
        ];
        if let Some((key, value)) = kv.entries().find(|(k, _)| !KNOWN.contains(k)) {
            return Err(KvError::Invalid { key: key.into(), value: value.into(), message: "unknown setting".into() });
        }
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = kv.parse_value($key)? {
                    $field = v;
                }
            };
        }
        set!(self.model.d_model, "d_model");
        set!(self.model.heads, "heads");
        set!(self.model.layers, "layers");
        set!(self.model.max_len, "max_len");
        set!(self.model.pe_kind, "pe_kind");
        set!(self.model.dropout, "dropout");
        set!(self.batch_size, "batch_size");
        set!(self.learning_rate, "learning_rate");
        set!(self.steps, "steps");
        set!(self.guardrails, "guardrails");
        set!(self.eval_every, "eval_every");
        set!(self.upscale, "upscale");
        set!(self.shuffle, "shuffle");
        set!(self.dynamic_shuffle, "dynamic_shuffle");
        set!(self.seed, "seed");
        set!(self.eval_train_accuracy, "eval_train_accuracy");
        set!(self.eval_loss, "eval_loss");
        set!(self.stop_when_perfect, "stop_when_perfect");
        if let Some(v) = opt_value(kv, "pin_last")? {
            self.pin_last = v;
        }
        if let Some(v) = opt_value(kv, "grad_clip")? {
            self.grad_clip = v;
        }
        if let Some(v) = opt_value(kv, "max_vocab")? {
            self.max_vocab = v;
        }
        if let Some(v) = opt_value(kv, "target")? {
            self.target = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.upscale == 0 {
            return bad("upscale must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {step}: {source}")]
    Loss { step: usize, source: LossError },
    #[error("step {step}: non-finite gradient")]
    NonFiniteGradient { step: usize },
    #[error("step {step}: {mass} probability mass on grammar-invalid tokens")]
    GuardrailViolation { step: usize, mass: f64 },
    #[error("no training document fits the length limit of {0}")]
    NothingToTrain(usize),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl Adam {
    pub fn new(size: usize, learning_rate: f64) -> Self {
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; size], v: vec![0.0; size], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (self.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Scales `grads` so that its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalRecord {
    pub test_accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    /// 1-based optimizer step.
    pub step: usize,
    pub train_loss: f64,
    /// Largest probability mass on grammar-invalid tokens in the batch;
    /// zero by construction with guardrails.
    pub invalid_mass: f64,
    pub eval: Option<EvalRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub entries: Vec<LogEntry>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| ryu::Buffer::new().format(x).to_string()).unwrap_or_default()
}

impl MetricsLog {
    /// `step,train_loss,test_accuracy`, one row per step; the accuracy is
    /// empty on steps without evaluation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,test_accuracy\n");
        for e in &self.entries {
            let acc = e.eval.and_then(|r| r.test_accuracy);
            out.push_str(&format!("{},{},{}\n", e.step, cell(Some(e.train_loss)), cell(acc)));
        }
        out
    }

    /// One row per evaluation with every measured quantity.
    pub fn eval_csv(&self) -> String {
        let mut out = String::from("step,train_loss,test_loss,train_accuracy,test_accuracy\n");
        for e in &self.entries {
            if let Some(r) = e.eval {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    e.step,
                    cell(r.train_loss),
                    cell(r.test_loss),
                    cell(r.train_accuracy),
                    cell(r.test_accuracy)
                ));
            }
        }
        out
    }

    pub fn evaluations(&self) -> impl Iterator<Item = (usize, &EvalRecord)> {
        self.entries.iter().filter_map(|e| e.eval.as_ref().map(|r| (e.step, r)))
    }

    pub fn last_eval(&self) -> Option<&EvalRecord> {
        self.entries.iter().rev().find_map(|e| e.eval.as_ref())
    }
}

/// First evaluated step whose test accuracy reaches 1.
pub fn n_success(log: &MetricsLog) -> Option<usize> {
    log.evaluations().find(|(_, r)| r.test_accuracy.is_some_and(|a| a >= 1.0)).map(|(step, _)| step)
}

/// Mean masked cross-entropy over every counted position of `seqs`.
pub fn dataset_loss(model: &Model<f32>, vocab: &Vocabulary, seqs: &[EncodedSequence], guardrails: bool) -> Result<f64, TrainError> {
    let masks = GrammarMasks::new(vocab);
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let batch = Batch::from_sequences(chunk, guardrails);
        let pass = model.forward(&batch.input, HeadRows::All, None, false)?;
        let row_masks: Vec<&[bool]> = batch.loss_sets().map(|s| masks.mask(s)).collect();
        let out = masked_cross_entropy(&pass.logits, vocab.len(), &batch.targets, &row_masks)
            .map_err(|source| TrainError::Loss { step: 0, source })?;
        total += out.loss * out.counted as f64;
        count += out.counted;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Largest softmax mass on grammar-invalid tokens over the counted rows.
fn grammar_invalid_mass(logits: &[f32], vocab_size: usize, batch: &Batch, masks: &GrammarMasks) -> f64 {
    let all = masks.mask(ValidSet::All);
    let mut worst: f64 = 0.0;
    for (row, (target, &set)) in batch.targets.iter().zip(&batch.valid).enumerate() {
        if target.is_none() {
            continue;
        }
        let Ok(p) = masked_distribution(&logits[row * vocab_size..(row + 1) * vocab_size], all) else { continue };
        let mask = masks.mask(set);
        worst = worst.max(p.iter().zip(mask).filter(|(_, &ok)| !ok).map(|(p, _)| p).sum());
    }
    worst
}

/// Statistics of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub invalid_mass: f64,
    pub grad_norm: f64,
}

/// Model, optimizer and batch stream; advanced one step at a time.
pub struct Trainer {
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    pub config: TrainConfig,
    masks: GrammarMasks,
    stream: BatchStream,
    adam: Adam,
    dropout_rng: ChaCha8Rng,
    /// Training documents that did not fit `max_len`.
    pub dropped: usize,
}

impl Trainer {
    pub fn new(train_docs: &[Document], config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let vocab = Vocabulary::build(train_docs, config.max_vocab)?;
        let mut model_config = config.model.clone();
        model_config.vocab_size = vocab.len();
        model_config.seed = config.seed;
        let model = Model::<f32>::new(model_config)?;
        let max_len = config.model.max_len;
        let stream_seed = config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);

        let (stream, dropped) = if config.dynamic_shuffle {
            let mut fitting = Vec::new();
            for (index, doc) in train_docs.iter().enumerate() {
                let len = tokenize(doc).map_err(|source| PipelineError::Tokenize { index, source })?.len();
                if len <= max_len {
                    fitting.push(doc.clone());
                }
            }
            let dropped = train_docs.len() - fitting.len();
            if fitting.is_empty() {
                return Err(TrainError::NothingToTrain(max_len));
            }
            let stream = BatchStream::reshuffling(
                fitting,
                vocab.clone(),
                config.pin_last.clone(),
                config.batch_size,
                config.guardrails,
                stream_seed,
            )?;
            (stream, dropped)
        } else {
            let options = UpscaleOptions { factor: config.upscale, shuffle: config.shuffle, pin_last: config.pin_last.clone() };
            let docs = upscale(train_docs, &options, config.seed)?;
            let (seqs, dropped) = encode_corpus(&docs, &vocab, max_len)?;
            if seqs.is_empty() {
                return Err(TrainError::NothingToTrain(max_len));
            }
            let dropped = dropped.len() / config.upscale;
            (BatchStream::new(seqs, config.batch_size, config.guardrails, stream_seed)?, dropped)
        };
        let adam = Adam::new(model.num_parameters(), config.learning_rate);
        Ok(Trainer {
            masks: GrammarMasks::new(&vocab),
            model,
            vocab,
            config: config.clone(),
            stream,
            adam,
            dropout_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0xd1b5_4a32_d192_ed03),
            dropped,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.adam.steps() as usize
    }

    /// One optimizer step. `inspect` sees the batch and its logits before
    /// the update.
    pub fn step_inspect(&mut self, mut inspect: impl FnMut(&Batch, &[f32])) -> Result<StepStats, TrainError> {
        let step = self.steps_done() + 1;
        let batch = self.stream.next_batch();
        let rng = (self.model.config.dropout > 0.0).then_some(&mut self.dropout_rng);
        let pass = self.model.forward(&batch.input, HeadRows::All, rng, true)?;
        inspect(&batch, &pass.logits);
        let row_masks: Vec<&[bool]> = batch.loss_sets().map(|s| self.masks.mask(s)).collect();
        let out = masked_cross_entropy(&pass.logits, self.vocab.len(), &batch.targets, &row_masks)
            .map_err(|source| TrainError::Loss { step, source })?;
        let invalid_mass = if self.config.guardrails {
            if out.invalid_mass != 0.0 {
                return Err(TrainError::GuardrailViolation { step, mass: out.invalid_mass });
            }
            0.0
        } else {
            grammar_invalid_mass(&pass.logits, self.vocab.len(), &batch, &self.masks)
        };
        let mut grads = self.model.backward(&batch.input, &pass, &out.dlogits);
        let grad_norm = match self.config.grad_clip {
            Some(max) => clip_gradients(&mut grads, max),
            None => grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt(),
        };
        if !grad_norm.is_finite() {
            return Err(TrainError::NonFiniteGradient { step });
        }
        self.adam.update(&mut self.model.params, &grads);
        Ok(StepStats { loss: out.loss, invalid_mass, grad_norm })
    }

    pub fn step(&mut self) -> Result<StepStats, TrainError> {
        self.step_inspect(|_, _| {})
    }

    /// Accuracy of greedy constrained prediction of `target` over `docs`,
    /// without duplicate-key suppression.
    pub fn accuracy(&self, docs: &[Document], target: &str) -> Result<f64, TrainError> {
        if docs.is_empty() {
            return Ok(0.0);
        }
        let options = DecodeOptions { no_duplicate_keys: false, ..DecodeOptions::default() };
        let results = classify_all(&self.model, &self.vocab, docs, target, &options)?;
        Ok(results.iter().filter(|c| c.correct).count() as f64 / docs.len() as f64)
    }

    pub fn loss_on(&self, docs: &[Document]) -> Result<f64, TrainError> {
        let (seqs, _) = encode_corpus(docs, &self.vocab, self.model.config.max_len)?;
        dataset_loss(&self.model, &self.vocab, &seqs, self.config.guardrails)
    }

    pub fn evaluate(&self, train_docs: &[Document], test_docs: &[Document]) -> Result<EvalRecord, TrainError> {
        let mut record = EvalRecord::default();
        if let Some(target) = &self.config.target {
            if !test_docs.is_empty() {
                record.test_accuracy = Some(self.accuracy(test_docs, target)?);
            }
            if self.config.eval_train_accuracy {
                record.train_accuracy = Some(self.accuracy(train_docs, target)?);
            }
        }
        if self.config.eval_loss {
            record.train_loss = Some(self.loss_on(train_docs)?);
            if !test_docs.is_empty() {
                record.test_loss = Some(self.loss_on(test_docs)?);
            }
        }
        Ok(record)
    }

    pub fn into_checkpoint(self, log: &MetricsLog) -> Checkpoint {
        let mut metadata = self.config.to_kv();
        metadata.set("steps_completed", self.adam.steps());
        if let Some(r) = log.last_eval() {
            if let Some(a) = r.test_accuracy {
                metadata.set("final_test_accuracy", a);
            }
        }
        Checkpoint { model: self.model, vocab: self.vocab, metadata }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: MetricsLog,
    pub dropped: usize,
}

/// Trains on `train_docs`, evaluating on `test_docs` every `eval_every`
/// steps and after the last step. `observer` sees every log entry.
pub fn train(
    train_docs: &[Document],
    test_docs: &[Document],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutput, TrainError> {
    let mut trainer = Trainer::new(train_docs, config)?;
    let mut log = MetricsLog::default();
    for step in 1..=config.steps {
        let stats = trainer.step()?;
        let eval = if step % config.eval_every == 0 || step == config.steps {
            Some(trainer.evaluate(train_docs, test_docs)?)
        } else {
            None
        };
        let entry = LogEntry { step, train_loss: stats.loss, invalid_mass: stats.invalid_mass, eval };
        observer(&entry);
        log.entries.push(entry);
        if config.stop_when_perfect && eval.and_then(|r| r.test_accuracy).is_some_and(|a| a >= 1.0) {
            break;
        }
    }
    let dropped = trainer.dropped;
    Ok(TrainOutput { checkpoint: trainer.into_checkpoint(&log), log, dropped })
}

/// Batch of one document for probing a model.
pub fn probe_input(doc: &Document, vocab: &Vocabulary) -> Result<BatchInput, TrainError> {
    let (seqs, _) = encode_corpus(std::slice::from_ref(doc), vocab, usize::MAX)?;
    let seq = &seqs[0];
    Ok(BatchInput::single(&seq.ids, &seq.symbols))
}

/// Convenience config for small models.
pub fn small_config(d_model: usize, heads: usize, layers: usize, max_len: usize, pe_kind: PositionEncodingKind) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { d_model, heads, layers, max_len, vocab_size: 8, pe_kind, dropout: 0.0, seed: 0 },
        ..TrainConfig::default()
    }
}
