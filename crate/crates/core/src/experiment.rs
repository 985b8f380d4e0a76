//! Pinned experiment presets: position-encoding comparison on Dungeons,
//! guardrails convergence, and upscaling on a small tabular corpus.

use std::fmt;
use std::str::FromStr;

use crate::datagen::{generate_dungeons, generate_tabular, DatagenError, DungeonsConfig, TabularConfig, DUNGEONS_TARGET, TABULAR_TARGET};
use crate::document::Document;
use crate::encoding::PositionEncodingKind;
use crate::kv::{KvError, KvFile};
use crate::metrics::mean_std;
use crate::model::ModelConfig;
use crate::pipeline::split;
use crate::training::{n_success, train, EvalRecord, LogEntry, MetricsLog, TrainConfig, TrainError};

/// Seed of the generated corpora; training seeds vary per run.
pub const DATA_SEED: u64 = 1;
pub const SPLIT_SEED: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    DungeonsPe,
    Guardrails,
    Upscaling,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dungeons-pe" => Ok(Preset::DungeonsPe),
            "guardrails" => Ok(Preset::Guardrails),
            "upscaling" => Ok(Preset::Upscaling),
            other => Err(format!("unknown preset {other:?} (expected dungeons-pe, guardrails or upscaling)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::DungeonsPe => "dungeons-pe",
            Preset::Guardrails => "guardrails",
            Preset::Upscaling => "upscaling",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error("override: {0}")]
    Override(#[from] KvError),
    #[error("{condition}, seed {seed}: {source}")]
    Train { condition: String, seed: u64, source: TrainError },
}

/// Overrides applied on top of a preset's pinned settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub n_instances: Option<usize>,
    pub eval_every: Option<usize>,
    pub batch_size: Option<usize>,
    /// Restrict to these condition names.
    pub conditions: Option<Vec<String>>,
    /// Training settings applied to every condition, last.
    pub settings: KvFile,
}

#[derive(Debug, Clone)]
pub struct Condition {
    pub name: String,
    pub config: TrainConfig,
}

/// Data and conditions of one preset.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub preset: Preset,
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub conditions: Vec<Condition>,
}

fn dungeons_base(steps: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            d_model: 128,
            heads: 4,
            layers: 4,
            max_len: 160,
            vocab_size: 0,
            pe_kind: PositionEncodingKind::KeyValue,
            dropout: 0.0,
            seed: 0,
        },
        batch_size: 100,
        learning_rate: 1e-3,
        steps,
        target: Some(DUNGEONS_TARGET.into()),
        ..TrainConfig::default()
    }
}

pub fn plan(preset: Preset, overrides: &Overrides) -> Result<ExperimentPlan, ExperimentError> {
    let (docs, fraction, conditions) = match preset {
        Preset::DungeonsPe => {
            let docs = generate_dungeons(&DungeonsConfig::hard(overrides.n_instances.unwrap_or(10_000), DATA_SEED))?;
            let base = TrainConfig { eval_train_accuracy: true, ..dungeons_base(5000) };
            let conditions = PositionEncodingKind::ALL
                .into_iter()
                .map(|pe| {
                    let mut config = base.clone();
                    config.model.pe_kind = pe;
                    Condition { name: pe.name().to_string(), config }
                })
                .collect();
            (docs, 0.8, conditions)
        }
        Preset::Guardrails => {
            let docs = generate_dungeons(&DungeonsConfig::easy(overrides.n_instances.unwrap_or(10_000), DATA_SEED))?;
            let base = TrainConfig { eval_every: 10, stop_when_perfect: true, ..dungeons_base(1000) };
            let conditions = [("guardrails", true), ("no-guardrails", false)]
                .into_iter()
                .map(|(name, guardrails)| Condition { name: name.into(), config: TrainConfig { guardrails, ..base.clone() } })
                .collect();
            (docs, 0.8, conditions)
        }
        Preset::Upscaling => {
            let docs = generate_tabular(&TabularConfig {
                n_instances: overrides.n_instances.unwrap_or(700),
                seed: DATA_SEED,
                ..TabularConfig::default()
            });
            let base = TrainConfig {
                model: ModelConfig {
                    d_model: 24,
                    heads: 4,
                    layers: 3,
                    max_len: 64,
                    vocab_size: 0,
                    pe_kind: PositionEncodingKind::KeyValue,
                    dropout: 0.0,
                    seed: 0,
                },
                batch_size: 50,
                learning_rate: 3e-3,
                steps: 1500,
                target: Some(TABULAR_TARGET.into()),
                pin_last: Some(TABULAR_TARGET.into()),
                eval_train_accuracy: true,
                eval_loss: true,
                ..TrainConfig::default()
            };
            let mut conditions =
                vec![Condition { name: "ordered".into(), config: TrainConfig { upscale: 1, shuffle: false, ..base.clone() } }];
            for factor in [1, 5, 10, 100, 1000] {
                conditions.push(Condition {
                    name: format!("x{factor}"),
                    config: TrainConfig { upscale: factor, shuffle: true, ..base.clone() },
                });
            }
            (docs, 0.5, conditions)
        }
    };
    let parts = split(&docs, fraction, SPLIT_SEED)?;
    let mut conditions: Vec<Condition> = conditions;
    for c in &mut conditions {
        if let Some(steps) = overrides.steps {
            c.config.steps = steps;
        }
        if let Some(every) = overrides.eval_every {
            c.config.eval_every = every;
        }
        if let Some(bs) = overrides.batch_size {
            c.config.batch_size = bs;
        }
        c.config.apply_kv(&overrides.settings)?;
    }
    if let Some(keep) = &overrides.conditions {
        conditions.retain(|c| keep.contains(&c.name));
    }
    Ok(ExperimentPlan { preset, train: parts.train, test: parts.test, conditions })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub condition: String,
    pub seed: u64,
    pub log: MetricsLog,
    pub last: EvalRecord,
    pub n_success: Option<usize>,
}

impl RunResult {
    pub fn loss_gap(&self) -> Option<f64> {
        Some(self.last.test_loss? - self.last.train_loss?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub condition: String,
    pub metric: &'static str,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub preset: Preset,
    pub runs: Vec<RunResult>,
}

fn num(v: Option<f64>) -> String {
    v.map(|x| ryu::Buffer::new().format(x).to_string()).unwrap_or_default()
}

impl ExperimentReport {
    pub fn conditions(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !names.contains(&r.condition.as_str()) {
                names.push(&r.condition);
            }
        }
        names
    }

    pub fn runs_of<'a>(&'a self, condition: &'a str) -> impl Iterator<Item = &'a RunResult> {
        self.runs.iter().filter(move |r| r.condition == condition)
    }

    /// Mean and sample std of every available final metric per condition.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        type Getter = fn(&RunResult) -> Option<f64>;
        let metrics: [(&'static str, Getter); 6] = [
            ("test_accuracy", |r| r.last.test_accuracy),
            ("train_accuracy", |r| r.last.train_accuracy),
            ("test_loss", |r| r.last.test_loss),
            ("train_loss", |r| r.last.train_loss),
            ("loss_gap", RunResult::loss_gap),
            ("n_success", |r| r.n_success.map(|n| n as f64)),
        ];
        let mut out = Vec::new();
        for condition in self.conditions() {
            for (metric, get) in metrics {
                let values: Vec<f64> = self.runs_of(condition).filter_map(get).collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&values);
                out.push(Aggregate { condition: condition.to_string(), metric, n: values.len(), mean, std });
            }
        }
        out
    }

    /// `condition,seed,<final metrics>` per run.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("condition,seed,steps,train_accuracy,test_accuracy,train_loss,test_loss,n_success\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.condition,
                r.seed,
                r.log.entries.last().map_or(0, |e| e.step),
                num(r.last.train_accuracy),
                num(r.last.test_accuracy),
                num(r.last.train_loss),
                num(r.last.test_loss),
                r.n_success.map(|n| n.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("condition,metric,n,mean,std\n");
        for a in self.aggregates() {
            out.push_str(&format!("{},{},{},{},{}\n", a.condition, a.metric, a.n, num(Some(a.mean)), num(Some(a.std))));
        }
        out
    }

    /// Evaluation curves of every run, one row per evaluation.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("condition,seed,step,train_loss,test_loss,train_accuracy,test_accuracy\n");
        for r in &self.runs {
            for (step, e) in r.log.evaluations() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.condition,
                    r.seed,
                    step,
                    num(e.train_loss),
                    num(e.test_loss),
                    num(e.train_accuracy),
                    num(e.test_accuracy)
                ));
            }
        }
        out
    }
}

/// Trains every condition of `plan` once per seed. `progress` sees each
/// log entry with its condition name and seed.
pub fn run_plan(
    plan: &ExperimentPlan,
    seeds: &[u64],
    progress: &mut dyn FnMut(&str, u64, &LogEntry),
) -> Result<ExperimentReport, ExperimentError> {
    let mut runs = Vec::new();
    for condition in &plan.conditions {
        for &seed in seeds {
            let config = TrainConfig { seed, ..condition.config.clone() };
            let out = train(&plan.train, &plan.test, &config, &mut |e| progress(&condition.name, seed, e))
                .map_err(|source| ExperimentError::Train { condition: condition.name.clone(), seed, source })?;
            runs.push(RunResult {
                condition: condition.name.clone(),
                seed,
                last: out.log.last_eval().copied().unwrap_or_default(),
                n_success: n_success(&out.log),
                log: out.log,
            });
        }
    }
    Ok(ExperimentReport { preset: plan.preset, runs })
}

pub fn run_experiment(
    preset: Preset,
    seeds: &[u64],
    overrides: &Overrides,
    progress: &mut dyn FnMut(&str, u64, &LogEntry),
) -> Result<ExperimentReport, ExperimentError> {
    run_plan(&plan(preset, overrides)?, seeds, progress)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names() {
        for p in [Preset::DungeonsPe, Preset::Guardrails, Preset::Upscaling] {
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
        }
        assert!("dungeons".parse::<Preset>().is_err());
    }

    #[test]
    fn pinned_plans() {
        let small = Overrides { n_instances: Some(50), ..Default::default() };
        let pe = plan(Preset::DungeonsPe, &small).unwrap();
        assert_eq!((pe.train.len(), pe.test.len()), (40, 10));
        let names: Vec<_> = pe.conditions.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names.len(), 4);
        assert!(pe.conditions.iter().all(|c| c.config.model.d_model == 128 && c.config.model.layers == 4));
        let g = plan(Preset::Guardrails, &small).unwrap();
        assert_eq!(g.conditions.iter().map(|c| c.config.guardrails).collect::<Vec<_>>(), [true, false]);
        let u = plan(Preset::Upscaling, &Overrides { conditions: Some(vec!["ordered".into(), "x100".into()]), ..small })
            .unwrap();
        assert_eq!(u.conditions.len(), 2);
        assert!(!u.conditions[0].config.shuffle);
        assert_eq!(u.conditions[1].config.upscale, 100);
    }

    #[test]
    fn settings_override_every_condition() {
        let mut settings = KvFile::new();
        settings.set("learning_rate", "0.01");
        settings.set("d_model", "32");
        let p = plan(Preset::Upscaling, &Overrides { n_instances: Some(20), settings, ..Default::default() }).unwrap();
        assert!(p.conditions.iter().all(|c| c.config.learning_rate == 0.01 && c.config.model.d_model == 32));
        assert!(p.conditions.iter().all(|c| c.config.pin_last.as_deref() == Some(TABULAR_TARGET)));

        let mut bad = KvFile::new();
        bad.set("learning_rat", "0.01");
        assert!(matches!(plan(Preset::Upscaling, &Overrides { settings: bad, ..Default::default() }), Err(ExperimentError::Override(_))));
    }

    #[test]
    fn tiny_run_aggregates() {
        let mut p = plan(
            Preset::Upscaling,
            &Overrides { n_instances: Some(20), steps: Some(4), eval_every: Some(2), conditions: Some(vec!["ordered".into()]), ..Default::default() },
        )
        .unwrap();
        p.conditions[0].config.model.d_model = 8;
        p.conditions[0].config.model.heads = 2;
        p.conditions[0].config.model.layers = 1;
        let report = run_plan(&p, &[0, 1], &mut |_, _, _| {}).unwrap();
        assert_eq!(report.runs.len(), 2);
        let acc = report.aggregates().into_iter().find(|a| a.metric == "test_accuracy").unwrap();
        assert_eq!(acc.n, 2);
        assert!(report.curves_csv().lines().count() == 1 + 2 * 2);
        assert!(report.summary_csv().starts_with("condition,metric,n,mean,std\n"));
    }
}
