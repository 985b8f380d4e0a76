//! Synthetic corpora and a CSV adapter.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::document::Document;

pub const TREASURES: [&str; 5] = ["gold", "silver", "gems", "potion", "curse"];
pub const MONSTERS: [&str; 5] = ["goblin", "orc", "dragon", "slime", "skeleton"];
pub const KEY_COLORS: [&str; 3] = ["red", "green", "blue"];
pub const DUNGEONS_TARGET: &str = "treasure";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DungeonsConfig {
    pub min_doors: usize,
    pub max_doors: usize,
    pub keys_per_door: usize,
    pub include_monsters: bool,
    pub shuffle_doors: bool,
    pub shuffle_keys: bool,
    pub n_instances: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatagenError {
    #[error("invalid dungeons configuration: {0}")]
    Config(String),
    #[error("unknown preset {0:?} (expected hard or easy)")]
    Preset(String),
}

impl DungeonsConfig {
    /// Corridor of 4 to 8 doors, shuffled doors and keys, with monsters.
    pub fn hard(n_instances: usize, seed: u64) -> Self {
        DungeonsConfig {
            min_doors: 4,
            max_doors: 8,
            keys_per_door: 3,
            include_monsters: true,
            shuffle_doors: true,
            shuffle_keys: true,
            n_instances,
            seed,
        }
    }

    /// As [`DungeonsConfig::hard`], but the corridor is sorted by door number.
    pub fn easy(n_instances: usize, seed: u64) -> Self {
        DungeonsConfig { shuffle_doors: false, ..Self::hard(n_instances, seed) }
    }

    pub fn preset(name: &str, n_instances: usize, seed: u64) -> Result<Self, DatagenError> {
        match name {
            "hard" | "dungeons-hard" => Ok(Self::hard(n_instances, seed)),
            "easy" | "dungeons-easy" => Ok(Self::easy(n_instances, seed)),
            other => Err(DatagenError::Preset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.min_doors < 1 || self.min_doors > self.max_doors {
            return Err(DatagenError::Config(format!(
                "need 1 <= min_doors ({}) <= max_doors ({})",
                self.min_doors, self.max_doors
            )));
        }
        if !(1..=KEY_COLORS.len()).contains(&self.keys_per_door) {
            return Err(DatagenError::Config(format!("keys_per_door must be 1 to {}", KEY_COLORS.len())));
        }
        Ok(())
    }

    /// Configuration and label lists, for the metadata sidecar.
    pub fn metadata(&self) -> Document {
        let strs = |items: &[&str]| Document::Array(items.iter().map(|s| Document::Str(s.to_string())).collect());
        let int = |v: usize| Document::Int(v as i64);
        Document::Object(vec![
            ("min_doors".into(), int(self.min_doors)),
            ("max_doors".into(), int(self.max_doors)),
            ("keys_per_door".into(), int(self.keys_per_door)),
            ("include_monsters".into(), Document::Bool(self.include_monsters)),
            ("shuffle_doors".into(), Document::Bool(self.shuffle_doors)),
            ("shuffle_keys".into(), Document::Bool(self.shuffle_keys)),
            ("n_instances".into(), int(self.n_instances)),
            ("seed".into(), Document::Int(self.seed as i64)),
            ("target".into(), Document::Str(DUNGEONS_TARGET.into())),
            ("treasures".into(), strs(&TREASURES)),
            ("monsters".into(), strs(&MONSTERS)),
            ("key_colors".into(), strs(&KEY_COLORS[..self.keys_per_door])),
        ])
    }
}

/// One instance; depends only on the config seed and `index`.
pub fn dungeon_instance(config: &DungeonsConfig, index: u64) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let colors = &KEY_COLORS[..config.keys_per_door];
    let doors = rng.random_range(config.min_doors..=config.max_doors);
    let door = rng.random_range(1..=doors);
    let key_color = *colors.choose(&mut rng).expect("at least one color");

    let mut numbers: Vec<usize> = (1..=doors).collect();
    if config.shuffle_doors {
        numbers.shuffle(&mut rng);
    }
    let mut treasure = None;
    let corridor = numbers
        .into_iter()
        .map(|no| {
            let mut pairs = vec![("door_no".to_string(), Document::Int(no as i64))];
            for &color in colors {
                let label = *TREASURES.choose(&mut rng).expect("treasures");
                if no == door && color == key_color {
                    treasure = Some(label);
                }
                pairs.push((format!("{color}_key"), Document::Str(label.into())));
            }
            if config.include_monsters {
                let count = rng.random_range(0..=2);
                let names = (0..count).map(|_| Document::Str((*MONSTERS.choose(&mut rng).expect("monsters")).into())).collect();
                pairs.push(("monsters".into(), Document::Array(names)));
            }
            if config.shuffle_keys {
                pairs.shuffle(&mut rng);
            }
            Document::Object(pairs)
        })
        .collect();
    Document::Object(vec![
        ("door".into(), Document::Int(door as i64)),
        ("key_color".into(), Document::Str(key_color.into())),
        ("corridor".into(), Document::Array(corridor)),
        (DUNGEONS_TARGET.into(), Document::Str(treasure.expect("door exists").into())),
    ])
}

pub fn generate_dungeons(config: &DungeonsConfig) -> Result<Vec<Document>, DatagenError> {
    config.validate()?;
    Ok((0..config.n_instances as u64).map(|i| dungeon_instance(config, i)).collect())
}

/// Re-derives the treasure of an instance from its clues.
pub fn solve_dungeon(doc: &Document) -> Option<&str> {
    let door = doc.get("door")?.as_i64()?;
    let color = doc.get("key_color")?.as_str()?;
    let room = doc.get("corridor")?.as_array()?.iter().find(|d| d.get("door_no").and_then(Document::as_i64) == Some(door))?;
    room.get(&format!("{color}_key"))?.as_str()
}

/// A small tabular classification corpus with label noise.
///
/// Each row has `categorical` string features `c0, c1, …` (values `a`–`e`),
/// `numeric` integer features `n0, n1, …` in `0..20` and a `label` of
/// `yes`/`no` determined by `c0`, `c1` and `n0`, flipped with probability
/// `noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularConfig {
    pub n_instances: usize,
    pub categorical: usize,
    pub numeric: usize,
    pub noise: f64,
    pub seed: u64,
}

pub const TABULAR_TARGET: &str = "label";

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig { n_instances: 700, categorical: 6, numeric: 2, noise: 0.15, seed: 0 }
    }
}

pub fn generate_tabular(config: &TabularConfig) -> Vec<Document> {
    assert!(config.categorical >= 2 && config.numeric >= 1, "the rule reads c0, c1 and n0");
    const LEVELS: [&str; 5] = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.n_instances)
        .map(|_| {
            let mut pairs = Vec::with_capacity(config.categorical + config.numeric + 1);
            let cats: Vec<&str> = (0..config.categorical).map(|_| *LEVELS.choose(&mut rng).expect("levels")).collect();
            let nums: Vec<i64> = (0..config.numeric).map(|_| rng.random_range(0..20)).collect();
            for (i, c) in cats.iter().enumerate() {
                pairs.push((format!("c{i}"), Document::Str(c.to_string())));
            }
            for (i, n) in nums.iter().enumerate() {
                pairs.push((format!("n{i}"), Document::Int(*n)));
            }
            let score = (cats[0] == "a" || cats[0] == "b") as u8 + (cats[1] == "c") as u8 + (nums[0] >= 10) as u8;
            let mut positive = score >= 2;
            if rng.random::<f64>() < config.noise {
                positive = !positive;
            }
            pairs.push((TABULAR_TARGET.into(), Document::Str(if positive { "yes" } else { "no" }.into())));
            Document::Object(pairs)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Int,
    Float,
    Bool,
    Str,
}

impl FromStr for ColumnType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "int" => Ok(ColumnType::Int),
            "float" => Ok(ColumnType::Float),
            "bool" => Ok(ColumnType::Bool),
            "str" | "string" => Ok(ColumnType::Str),
            other => Err(format!("unknown column type {other:?} (expected int, float, bool or str)")),
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Int => "int",
            ColumnType::Float => "float",
            ColumnType::Bool => "bool",
            ColumnType::Str => "str",
        })
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },
    #[error("header repeats column {0:?}")]
    DuplicateColumn(String),
    #[error("line {line}, column {column:?}: {value:?} is not a valid {kind}")]
    BadCell { line: u64, column: String, value: String, kind: ColumnType },
    #[error("type hint for unknown column {0:?}")]
    UnknownHint(String),
}

fn parse_cell(value: &str, kind: ColumnType) -> Option<Document> {
    match kind {
        ColumnType::Int => value.parse().ok().map(Document::Int),
        ColumnType::Float => value.parse::<f64>().ok().filter(|f| f.is_finite()).map(Document::Float),
        ColumnType::Bool => match value {
            "true" => Some(Document::Bool(true)),
            "false" => Some(Document::Bool(false)),
            _ => None,
        },
        ColumnType::Str => Some(Document::Str(value.to_string())),
    }
}

/// Narrowest type that parses every non-empty cell of a column.
pub fn infer_column(cells: &[&str]) -> ColumnType {
    [ColumnType::Int, ColumnType::Float, ColumnType::Bool]
        .into_iter()
        .find(|&kind| cells.iter().filter(|c| !c.is_empty()).all(|c| parse_cell(c, kind).is_some()))
        .filter(|_| cells.iter().any(|c| !c.is_empty()))
        .unwrap_or(ColumnType::Str)
}

/// Converts CSV text with a header row to flat objects. Columns without a
/// hint get the narrowest type valid for the whole column; empty cells
/// leave the key out.
pub fn csv_to_documents(text: &str, hints: &HashMap<String, ColumnType>) -> Result<Vec<Document>, CsvError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    for (i, name) in header.iter().enumerate() {
        if header[..i].contains(name) {
            return Err(CsvError::DuplicateColumn(name.clone()));
        }
    }
    if let Some(unknown) = hints.keys().find(|k| !header.contains(k)) {
        return Err(CsvError::UnknownHint(unknown.clone()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CsvError::Ragged { line, expected: header.len(), found: record.len() });
        }
        rows.push((line, record));
    }
    let types: Vec<ColumnType> = header
        .iter()
        .enumerate()
        .map(|(c, name)| {
            hints.get(name).copied().unwrap_or_else(|| {
                let cells: Vec<&str> = rows.iter().map(|(_, r)| &r[c]).collect();
                infer_column(&cells)
            })
        })
        .collect();
    rows.iter()
        .map(|(line, record)| {
            let mut pairs = Vec::new();
            for ((name, &kind), value) in header.iter().zip(&types).zip(record.iter()) {
                if value.is_empty() {
                    continue;
                }
                let cell = parse_cell(value, kind).ok_or_else(|| CsvError::BadCell {
                    line: *line,
                    column: name.clone(),
                    value: value.to_string(),
                    kind,
                })?;
                pairs.push((name.clone(), cell));
            }
            Ok(Document::Object(pairs))
        })
        .collect()
}

pub fn csv_to_jsonl(path: impl AsRef<std::path::Path>, hints: &HashMap<String, ColumnType>) -> Result<Vec<Document>, CsvError> {
    let text = std::fs::read_to_string(path).map_err(|e| CsvError::Csv(e.into()))?;
    csv_to_documents(&text, hints)
}
