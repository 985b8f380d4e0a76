//! Accuracy and multi-label precision/recall/F1.

use std::collections::BTreeSet;
use std::str::FromStr;

use crate::document::{serialize_json, Document};
use crate::inference::{classify_all, label_set, Classification, DecodeOptions, InferenceError};
use crate::model::{Model, Scalar};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// One label token per instance; scored by exact match.
    Single,
    /// Arrays of labels; additionally scored by precision, recall and F1.
    Multi,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Task::Single),
            "multi" => Ok(Task::Multi),
            other => Err(format!("unknown task {other:?} (expected single or multi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged scores over binary label indicators; each pair is
/// `(truth, prediction)`.
pub fn micro_prf(pairs: &[(BTreeSet<String>, BTreeSet<String>)]) -> Prf {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (truth, pred) in pairs {
        let hit = truth.intersection(pred).count();
        tp += hit;
        fp += pred.len() - hit;
        fn_ += truth.len() - hit;
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf { precision, recall, f1: f1_score(precision, recall) }
}

/// Scores computed per instance and then averaged. An instance with empty
/// truth and empty prediction scores 1.
pub fn samples_prf(pairs: &[(BTreeSet<String>, BTreeSet<String>)]) -> Prf {
    if pairs.is_empty() {
        return Prf { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for (truth, pred) in pairs {
        if truth.is_empty() && pred.is_empty() {
            p += 1.0;
            r += 1.0;
            f += 1.0;
            continue;
        }
        let hit = truth.intersection(pred).count();
        let (pi, ri) = (ratio(hit, pred.len()), ratio(hit, truth.len()));
        p += pi;
        r += ri;
        f += f1_score(pi, ri);
    }
    let n = pairs.len() as f64;
    Prf { precision: p / n, recall: r / n, f1: f / n }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub instances: usize,
    pub correct: usize,
    /// Instances that could not be decoded; all counted as incorrect.
    pub discarded: usize,
    pub accuracy: f64,
    pub micro: Option<Prf>,
    pub samples: Option<Prf>,
}

fn labels(value: &Document) -> BTreeSet<String> {
    match value {
        Document::Array(items) => label_set(items),
        other => BTreeSet::from([serialize_json(other)]),
    }
}

impl MetricsReport {
    pub fn from_classifications(results: &[Classification], task: Task) -> Self {
        let correct = results.iter().filter(|c| c.correct).count();
        let discarded = results.iter().filter(|c| c.prediction.is_none()).count();
        let (micro, samples) = match task {
            Task::Single => (None, None),
            Task::Multi => {
                let pairs: Vec<_> = results
                    .iter()
                    .map(|c| (labels(&c.truth), c.prediction.as_ref().map(labels).unwrap_or_default()))
                    .collect();
                (Some(micro_prf(&pairs)), Some(samples_prf(&pairs)))
            }
        };
        MetricsReport {
            instances: results.len(),
            correct,
            discarded,
            accuracy: ratio(correct, results.len()),
            micro,
            samples,
        }
    }

    pub fn to_document(&self) -> Document {
        let mut pairs = vec![
            ("instances".to_string(), Document::Int(self.instances as i64)),
            ("correct".to_string(), Document::Int(self.correct as i64)),
            ("discarded".to_string(), Document::Int(self.discarded as i64)),
            ("accuracy".to_string(), Document::Float(self.accuracy)),
        ];
        for (name, prf) in [("micro", self.micro), ("samples", self.samples)] {
            if let Some(prf) = prf {
                pairs.push((
                    name.to_string(),
                    Document::Object(vec![
                        ("precision".into(), Document::Float(prf.precision)),
                        ("recall".into(), Document::Float(prf.recall)),
                        ("f1".into(), Document::Float(prf.f1)),
                    ]),
                ));
            }
        }
        Document::Object(pairs)
    }
}

/// Predicts `target` on every document and scores the predictions.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    docs: &[Document],
    target: &str,
    task: Task,
    options: &DecodeOptions,
) -> Result<MetricsReport, InferenceError> {
    let results = classify_all(model, vocab, docs, target, options)?;
    Ok(MetricsReport::from_classifications(&results, task))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn f1_zero_when_both_zero() {
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        assert!(close(f1_score(1.0, 0.5), 2.0 / 3.0));
    }

    #[test]
    fn partial_recall_single_instance() {
        let m = micro_prf(&[(set(&["A", "B"]), set(&["A"]))]);
        assert!(close(m.precision, 1.0) && close(m.recall, 0.5) && close(m.f1, 2.0 / 3.0));
    }

    #[test]
    fn micro_vs_samples() {
        // micro pools counts: tp 2, fp 2, fn 1; samples averages per row
        let pairs = [(set(&["A", "B"]), set(&["A", "C"])), (set(&["C"]), set(&["C", "D"]))];
        let m = micro_prf(&pairs);
        assert!(close(m.precision, 0.5) && close(m.recall, 2.0 / 3.0));
        let s = samples_prf(&pairs);
        assert!(close(s.precision, 0.5));
        assert!(close(s.recall, 0.75));
        assert!(close(s.f1, (0.5 + 2.0 / 3.0) / 2.0));
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!(close(m, 2.5));
        assert!(close(s, (5.0f64 / 3.0).sqrt()));
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn report_counts() {
        let c = |truth: &str, pred: Option<&str>, correct| Classification {
            truth: Document::Str(truth.into()),
            prediction: pred.map(|p| Document::Str(p.into())),
            error: None,
            correct,
        };
        let r = MetricsReport::from_classifications(&[c("a", Some("a"), true), c("b", None, false)], Task::Single);
        assert_eq!((r.instances, r.correct, r.discarded), (2, 1, 1));
        assert!(close(r.accuracy, 0.5));
        assert!(r.micro.is_none());
        let multi = MetricsReport::from_classifications(&[c("a", Some("a"), true)], Task::Multi);
        assert_eq!(multi.micro.unwrap().f1, 1.0);
    }
}
