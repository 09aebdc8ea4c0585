use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Confusion matrix (rows actual, columns predicted) with per-class and
/// averaged precision, recall and F1. Ratios with a zero denominator are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl EvaluationReport {
    pub fn from_predictions(
        actual: &[usize],
        predicted: &[usize],
        class_names: &[String],
    ) -> Result<Self> {
        if actual.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        if actual.len() != predicted.len() {
            return Err(Error::Dimension {
                expected: vec![actual.len()],
                found: vec![predicted.len()],
            });
        }
        let k = class_names.len();
        if let Some(&bad) = actual.iter().chain(predicted).find(|&&c| c >= k) {
            return Err(Error::Data(format!("class index {bad} outside [0, {k})")));
        }
        let mut confusion = vec![vec![0usize; k]; k];
        for (&a, &p) in actual.iter().zip(predicted) {
            confusion[a][p] += 1;
        }
        let n = actual.len();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
                let (precision, recall) = (ratio(tp, predicted_c), ratio(tp, support));
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                }
            })
            .collect();
        let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
        let avg = |weight: &dyn Fn(&ClassMetrics) -> f64, total: f64| ClassMetrics {
            precision: per_class
                .iter()
                .map(|m| weight(m) * m.precision)
                .sum::<f64>()
                / total,
            recall: per_class.iter().map(|m| weight(m) * m.recall).sum::<f64>() / total,
            f1: per_class.iter().map(|m| weight(m) * m.f1).sum::<f64>() / total,
            support: n,
        };
        let macro_avg = avg(&|_| 1.0, k as f64);
        let weighted_avg = avg(&|m| m.support as f64, n as f64);
        Ok(Self {
            class_names: class_names.to_vec(),
            confusion,
            per_class,
            accuracy: ratio(trace, n),
            macro_avg,
            weighted_avg,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Classification report: one row per class, then accuracy, macro and
    /// weighted averages, with four-decimal metrics.
    pub fn to_text(&self) -> String {
        let name_w = self
            .class_names
            .iter()
            .map(String::len)
            .chain(["weighted avg".len()])
            .max()
            .unwrap();
        let mut s = String::new();
        writeln!(
            s,
            "{:name_w$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "", "precision", "recall", "f1-score", "support"
        )
        .unwrap();
        let line = |s: &mut String, name: &str, m: &ClassMetrics| {
            writeln!(
                s,
                "{name:name_w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
                m.precision, m.recall, m.f1, m.support
            )
            .unwrap();
        };
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            line(&mut s, name, m);
        }
        writeln!(
            s,
            "{:name_w$}  {:>9}  {:>9}  {:>9.4}  {:>9}",
            "accuracy",
            "",
            "",
            self.accuracy,
            self.total()
        )
        .unwrap();
        line(&mut s, "macro avg", &self.macro_avg);
        line(&mut s, "weighted avg", &self.weighted_avg);
        s
    }

    /// Same rows as [`Self::to_text`] as CSV with full precision.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "precision", "recall", "f1", "support"])
            .unwrap();
        let rec = |name: &str, m: &ClassMetrics| {
            [
                name.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.support.to_string(),
            ]
        };
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            w.write_record(rec(name, m)).unwrap();
        }
        w.write_record([
            "accuracy".into(),
            String::new(),
            String::new(),
            self.accuracy.to_string(),
            self.total().to_string(),
        ])
        .unwrap();
        w.write_record(rec("macro avg", &self.macro_avg)).unwrap();
        w.write_record(rec("weighted avg", &self.weighted_avg))
            .unwrap();
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Confusion matrix as CSV: header of predicted class names, one row per
    /// actual class.
    pub fn confusion_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["actual\\predicted".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header).unwrap();
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}
