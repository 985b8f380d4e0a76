//! Checkpoint directories: `manifest.txt`, `weights.bin` and `vocab.txt`.
//!
//! The manifest is a `key = value` file holding the model configuration, the
//! vocabulary checksum, one `tensor.<name> = <shape>` line per parameter
//! tensor and any `train.*` metadata. `weights.bin` is the concatenation of
//! those tensors as little-endian `f32`, in manifest order.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Model, ModelConfig, ModelError, ParamLayout};
use crate::kv::{KvError, KvFile};
use crate::vocab::{VocabFileError, Vocabulary};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest: {0}")]
    Manifest(#[from] KvError),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("manifest tensors do not match the configured model: {0}")]
    Layout(String),
    #[error("weights file holds {got} bytes, expected {expected}")]
    WeightsSize { got: usize, expected: usize },
    #[error("vocabulary: {0}")]
    Vocab(#[from] VocabFileError),
    #[error("vocabulary checksum {got} does not match manifest {expected}")]
    Checksum { got: String, expected: String },
    #[error("vocabulary has {got} tokens but the model expects {expected}")]
    VocabSize { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A trained model with its vocabulary and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    /// Extra manifest entries, stored under a `train.` prefix.
    pub metadata: KvFile,
}

fn config_to_kv(config: &ModelConfig, kv: &mut KvFile) {
    kv.set("d_model", config.d_model);
    kv.set("heads", config.heads);
    kv.set("layers", config.layers);
    kv.set("max_len", config.max_len);
    kv.set("vocab_size", config.vocab_size);
    kv.set("pe_kind", config.pe_kind);
    kv.set("dropout", config.dropout);
    kv.set("seed", config.seed);
}

fn config_from_kv(kv: &KvFile) -> Result<ModelConfig, KvError> {
    Ok(ModelConfig {
        d_model: kv.require_value("d_model")?,
        heads: kv.require_value("heads")?,
        layers: kv.require_value("layers")?,
        max_len: kv.require_value("max_len")?,
        vocab_size: kv.require_value("vocab_size")?,
        pe_kind: kv.require_value("pe_kind")?,
        dropout: kv.require_value("dropout")?,
        seed: kv.require_value("seed")?,
    })
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl Checkpoint {
    pub fn manifest(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("format_version", FORMAT_VERSION);
        config_to_kv(&self.model.config, &mut kv);
        kv.set("vocab_checksum", self.vocab.checksum());
        for entry in &self.model.layout.entries {
            kv.set(&format!("tensor.{}", entry.name), shape_text(&entry.shape));
        }
        for (k, v) in self.metadata.entries() {
            kv.set(&format!("train.{k}"), v);
        }
        kv
    }

    pub fn weights_bytes(&self) -> Vec<u8> {
        self.model.params.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    /// Reassembles a checkpoint from the contents of its three files.
    pub fn from_parts(manifest: &str, weights: &[u8], vocab: &str) -> Result<Self, CheckpointError> {
        let kv = KvFile::parse(manifest)?;
        let version: u32 = kv.require_value("format_version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config = config_from_kv(&kv)?;
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let listed: Vec<(&str, &str)> =
            kv.entries().filter_map(|(k, v)| k.strip_prefix("tensor.").map(|name| (name, v))).collect();
        let expected: Vec<(String, String)> =
            layout.entries.iter().map(|e| (e.name.clone(), shape_text(&e.shape))).collect();
        if listed.len() != expected.len() || listed.iter().zip(&expected).any(|((n, s), (en, es))| n != en || s != es) {
            return Err(CheckpointError::Layout(format!(
                "{} tensors listed, {} expected",
                listed.len(),
                expected.len()
            )));
        }
        if weights.len() != layout.total * 4 {
            return Err(CheckpointError::WeightsSize { got: weights.len(), expected: layout.total * 4 });
        }
        let params: Vec<f32> =
            weights.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if params.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite("checkpoint weights").into());
        }

        let vocab = Vocabulary::from_text(vocab)?;
        let checksum = vocab.checksum();
        let recorded = kv.require("vocab_checksum")?;
        if checksum != recorded {
            return Err(CheckpointError::Checksum { got: checksum, expected: recorded.to_string() });
        }
        if vocab.len() != config.vocab_size {
            return Err(CheckpointError::VocabSize { got: vocab.len(), expected: config.vocab_size });
        }

        let mut metadata = KvFile::new();
        for (k, v) in kv.entries() {
            if let Some(rest) = k.strip_prefix("train.") {
                metadata.set(rest, v);
            }
        }
        Ok(Checkpoint { model: Model::from_parts(config, params)?, vocab, metadata })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

pub fn save_checkpoint(dir: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))
    };
    write(MANIFEST_FILE, checkpoint.manifest().to_text().as_bytes())?;
    write(WEIGHTS_FILE, &checkpoint.weights_bytes())?;
    write(VOCAB_FILE, checkpoint.vocab.to_text().as_bytes())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(io_err(&path))
    };
    let text = |name: &str| {
        let bytes = read(name)?;
        String::from_utf8(bytes).map_err(|e| CheckpointError::Io {
            path: dir.join(name),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })
    };
    Checkpoint::from_parts(&text(MANIFEST_FILE)?, &read(WEIGHTS_FILE)?, &text(VOCAB_FILE)?)
}
