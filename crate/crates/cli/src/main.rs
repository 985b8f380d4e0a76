use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use origami::datagen::{csv_to_jsonl, generate_dungeons, ColumnType, DungeonsConfig};
use origami::document::{to_jsonl, Corpus};
use origami::experiment::{run_experiment, Overrides, Preset};
use origami::inference::{classify_all, generate, DecodeOptions, Decoding};
use origami::kv::KvFile;
use origami::metrics::{MetricsReport, Task};
use origami::model::{load_checkpoint, save_checkpoint, Checkpoint};
use origami::pipeline::split;
use origami::tokenizer::detokenize;
use origami::training::{train, TrainConfig};
use origami::vocab::token_text;
use origami::{accepts, load_jsonl, serialize_json, tokenize, Document, OnError, Vocabulary};

#[derive(Parser)]
#[command(name = "origami", version, about = "Train and query transformer models of JSON documents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Build a vocabulary file from a JSONL corpus.
    BuildVocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        max_vocab: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the token sequence (or ids, given a vocabulary) of each document.
    Tokenize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that every line parses, tokenizes and round-trips.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Predict a key for every document; writes prediction/truth pairs.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: String,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate documents from scratch.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions of a key against the stored values.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "single")]
        task: Task,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a Dungeons corpus and a `.meta.json` sidecar.
    GenDungeons {
        #[arg(long, default_value = "hard")]
        preset: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a CSV file with a header row to JSONL.
    Csv2jsonl {
        #[arg(long)]
        input: PathBuf,
        /// Column type hint, `name=int|float|bool|str`; repeatable.
        #[arg(long = "type", value_name = "COLUMN=TYPE")]
        types: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment preset and write its tables to a directory.
    Experiment {
        #[arg(long)]
        preset: Preset,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        eval_every: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Comma-separated subset of the preset's conditions.
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<String>>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        quiet: bool,
        /// Training setting for every condition as `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Args)]
struct DecodeArgs {
    /// Sample at this temperature instead of greedy decoding.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allow a key to repeat within one object.
    #[arg(long)]
    allow_duplicate_keys: bool,
    #[arg(long, default_value_t = 256)]
    max_new_tokens: usize,
}

impl DecodeArgs {
    fn options(&self) -> DecodeOptions {
        DecodeOptions {
            decoding: match self.temperature {
                Some(temperature) => Decoding::Sampled { temperature, seed: self.seed },
                None => Decoding::Greedy,
            },
            no_duplicate_keys: !self.allow_duplicate_keys,
            max_new_tokens: self.max_new_tokens,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Held-out corpus; alternatively use --split.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Fraction of --train kept for training; the rest is held out.
    #[arg(long)]
    split: Option<f64>,
    /// Key-value config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Per-step metrics CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// kvpe, absolute, sinusoidal or none.
    #[arg(long)]
    pe: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    upscale: Option<usize>,
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long)]
    no_guardrails: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    pin_last: Option<String>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Any other setting as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn parse_settings(items: &[String]) -> Result<KvFile> {
    let mut kv = KvFile::new();
    for item in items {
        let Some((k, v)) = item.split_once('=') else {
            return Err(Usage(format!("--set expects KEY=VALUE, got {item:?}")).into());
        };
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

impl TrainArgs {
    fn flags(&self) -> Result<KvFile> {
        let mut kv = KvFile::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(k, v);
            }
        };
        put("steps", self.steps.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("d_model", self.d_model.map(|v| v.to_string()));
        put("heads", self.heads.map(|v| v.to_string()));
        put("layers", self.layers.map(|v| v.to_string()));
        put("max_len", self.max_len.map(|v| v.to_string()));
        put("pe_kind", self.pe.clone());
        put("dropout", self.dropout.map(|v| v.to_string()));
        put("upscale", self.upscale.map(|v| v.to_string()));
        put("shuffle", self.no_shuffle.then(|| "false".into()));
        put("guardrails", self.no_guardrails.then(|| "false".into()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("target", self.target.clone());
        put("pin_last", self.pin_last.clone());
        put("eval_every", self.eval_every.map(|v| v.to_string()));
        put("max_vocab", self.max_vocab.map(|v| v.to_string()));
        put("grad_clip", self.grad_clip.map(|v| v.to_string()));
        for (k, v) in parse_settings(&self.set)?.entries() {
            kv.set(k, v);
        }
        Ok(kv)
    }

    fn config(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let kv = KvFile::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
            config.apply_kv(&kv).with_context(|| format!("applying {}", path.display()))?;
        }
        config.apply_kv(&self.flags()?).map_err(|e| Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    /// Invalid combination of arguments; exits with status 2.
    #[error("{0}")]
    Usage(String),
    /// Input that failed validation; exits with status 1.
    #[error("{0} invalid line(s)")]
    Invalid(usize),
}

use CliError::{Invalid, Usage};

fn output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn corpus(path: &Path) -> Result<Vec<Document>> {
    Ok(load_jsonl(path, OnError::FailFast).with_context(|| format!("loading {}", path.display()))?.documents)
}

fn checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn string_array(items: impl IntoIterator<Item = String>) -> Document {
    Document::Array(items.into_iter().map(Document::Str).collect())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildVocab { input, max_vocab, out } => {
            let vocab = Vocabulary::build(&corpus(&input)?, max_vocab)?;
            output(out.as_deref(), &vocab.to_text())
        }
        Command::Tokenize { input, vocab, out } => {
            let vocab = match vocab {
                Some(p) => Some(Vocabulary::from_text(&fs::read_to_string(&p)?).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            let mut lines = Vec::new();
            for doc in corpus(&input)? {
                let tokens = tokenize(&doc)?;
                let field = match &vocab {
                    Some(v) => (
                        "ids".to_string(),
                        Document::Array(v.encode_unpadded(&tokens).into_iter().map(|id| Document::Int(id as i64)).collect()),
                    ),
                    None => ("tokens".to_string(), string_array(tokens.iter().map(token_text))),
                };
                lines.push(Document::Object(vec![field]));
            }
            output(out.as_deref(), &to_jsonl(&lines))
        }
        Command::Validate { input } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let Corpus { documents, lines, skipped } = origami::document::parse_jsonl(&text, OnError::Skip)?;
            let mut report = Vec::new();
            for e in &skipped {
                report.push(Document::Object(vec![
                    ("line".into(), Document::Int(e.line as i64)),
                    ("error".into(), Document::Str(e.error.to_string())),
                ]));
            }
            for (doc, line) in documents.iter().zip(lines) {
                let problem = match tokenize(doc) {
                    Err(e) => Some(e.to_string()),
                    Ok(tokens) if !accepts(&tokens) => Some("token sequence rejected by the grammar".into()),
                    Ok(tokens) => match detokenize(&tokens) {
                        Ok(back) if &back == doc => None,
                        Ok(_) => Some("round trip changed the document".into()),
                        Err(e) => Some(e.to_string()),
                    },
                };
                if let Some(problem) = problem {
                    report.push(Document::Object(vec![
                        ("line".into(), Document::Int(line as i64)),
                        ("error".into(), Document::Str(problem)),
                    ]));
                }
            }
            output(None, &to_jsonl(&report))?;
            eprintln!("{} valid, {} invalid", lines_valid(&documents, &report, &skipped), report.len());
            if report.is_empty() {
                Ok(())
            } else {
                Err(Invalid(report.len()).into())
            }
        }
        Command::Train(args) => {
            let config = args.config()?;
            let docs = corpus(&args.train)?;
            let (train_docs, test_docs) = match (&args.test, args.split) {
                (Some(_), Some(_)) => return Err(Usage("--test and --split are mutually exclusive".into()).into()),
                (Some(p), None) => (docs, corpus(p)?),
                (None, Some(f)) => {
                    let parts = split(&docs, f, config.seed)?;
                    (parts.train, parts.test)
                }
                (None, None) => (docs, Vec::new()),
            };
            let mut csv = String::from("step,train_loss,test_accuracy\n");
            let out = train(&train_docs, &test_docs, &config, &mut |e| {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    e.step,
                    e.train_loss,
                    e.eval.and_then(|r| r.test_accuracy).map(|a| a.to_string()).unwrap_or_default()
                ));
                if let Some(r) = e.eval {
                    let acc = r.test_accuracy.map(|a| format!(" test_accuracy {a:.4}")).unwrap_or_default();
                    eprintln!("step {} loss {:.5}{acc}", e.step, e.train_loss);
                }
            })?;
            if out.dropped > 0 {
                eprintln!("dropped {} training documents longer than max_len", out.dropped);
            }
            save_checkpoint(&args.out, &out.checkpoint).with_context(|| format!("writing {}", args.out.display()))?;
            if let Some(p) = &args.log {
                output(Some(p), &out.log.to_csv())?;
            }
            Ok(())
        }
        Command::Predict { checkpoint: ck, input, target, decode, out } => {
            let ck = checkpoint(&ck)?;
            let results = classify_all(&ck.model, &ck.vocab, &corpus(&input)?, &target, &decode.options())?;
            let lines: Vec<Document> = results
                .into_iter()
                .map(|c| {
                    let mut fields = vec![("prediction".to_string(), c.prediction.unwrap_or(Document::Null)), ("truth".to_string(), c.truth)];
                    if let Some(e) = c.error {
                        fields.push(("error".into(), Document::Str(e.to_string())));
                    }
                    Document::Object(fields)
                })
                .collect();
            output(out.as_deref(), &to_jsonl(&lines))
        }
        Command::Generate { checkpoint: ck, n, decode, out } => {
            let ck = checkpoint(&ck)?;
            let mut text = String::new();
            for (i, r) in generate(&ck.model, &ck.vocab, n, &decode.options()).into_iter().enumerate() {
                match r {
                    Ok(doc) => {
                        text.push_str(&serialize_json(&doc));
                        text.push('\n');
                    }
                    Err(e) => eprintln!("sample {i}: {e}"),
                }
            }
            output(out.as_deref(), &text)
        }
        Command::Evaluate { checkpoint: ck, input, target, task, decode, out } => {
            let ck = checkpoint(&ck)?;
            let results = classify_all(&ck.model, &ck.vocab, &corpus(&input)?, &target, &decode.options())?;
            let report = MetricsReport::from_classifications(&results, task);
            output(out.as_deref(), &format!("{}\n", serialize_json(&report.to_document())))
        }
        Command::GenDungeons { preset, n, seed, out } => {
            let config = DungeonsConfig::preset(&preset, n, seed).map_err(|e| Usage(e.to_string()))?;
            let docs = generate_dungeons(&config)?;
            output(Some(&out), &to_jsonl(&docs))?;
            let mut sidecar = out.clone().into_os_string();
            sidecar.push(".meta.json");
            output(Some(Path::new(&sidecar)), &format!("{}\n", serialize_json(&config.metadata())))
        }
        Command::Csv2jsonl { input, types, out } => {
            let mut hints = HashMap::new();
            for t in &types {
                let Some((col, ty)) = t.split_once('=') else {
                    return Err(Usage(format!("--type expects COLUMN=TYPE, got {t:?}")).into());
                };
                let ty: ColumnType = ty.parse().map_err(Usage)?;
                hints.insert(col.to_string(), ty);
            }
            let docs = csv_to_jsonl(&input, &hints).with_context(|| format!("converting {}", input.display()))?;
            output(out.as_deref(), &to_jsonl(&docs))
        }
        Command::Experiment { preset, seeds, steps, n, eval_every, batch_size, conditions, out_dir, quiet, set } => {
            let overrides = Overrides { steps, n_instances: n, eval_every, batch_size, conditions, settings: parse_settings(&set)? };
            let report = run_experiment(preset, &seeds, &overrides, &mut |cond, seed, e| {
                if let (false, Some(r)) = (quiet, e.eval) {
                    let acc = r.test_accuracy.map(|a| format!(" test_accuracy {a:.4}")).unwrap_or_default();
                    eprintln!("{cond} seed {seed} step {} loss {:.5}{acc}", e.step, e.train_loss);
                }
            })?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for r in &report.runs {
                output(Some(&out_dir.join(format!("{}_seed{}.csv", r.condition, r.seed))), &r.log.to_csv())?;
            }
            output(Some(&out_dir.join("runs.csv")), &report.runs_csv())?;
            output(Some(&out_dir.join("curves.csv")), &report.curves_csv())?;
            output(Some(&out_dir.join("summary.csv")), &report.summary_csv())?;
            output(None, &report.summary_csv())
        }
    }
}

fn lines_valid(documents: &[Document], report: &[Document], skipped: &[origami::document::LineError]) -> usize {
    documents.len() + skipped.len() - report.len()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<CliError>(), Some(Usage(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
