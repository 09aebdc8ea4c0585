use std::fmt::Write as _;
use std::io::Write as _;
use std::time::Instant;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use sha2::{Digest, Sha256};

use crate::data::Fam;
use crate::error::{Error, Result};
use crate::models::{evaluate, predict_classes, SemiSupervisedModel};
use crate::nn::{params_serialize, ParameterSet};

/// Passes timed per measurement; the median is reported.
const TIMING_RUNS: usize = 5;

/// Size, accuracy and speed of one model on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub serialized_size_bytes: usize,
    /// Raw deflate (RFC 1951, level 9) of the serialized parameters.
    pub compressed_size_bytes: usize,
    /// Same, restricted to the layers after the encoder (CNN and head).
    pub head_compressed_size_bytes: usize,
    pub accuracy: f64,
    /// Median wall-clock seconds for one pass over the test set.
    pub inference_time_seconds: f64,
    pub parameter_count: usize,
    pub test_digest: String,
}

fn deflated_len(bytes: &[u8]) -> usize {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

fn compressed(params: &ParameterSet) -> usize {
    deflated_len(&params_serialize(params))
}

/// SHA-256 over the rows and labels of a FAM, to tie measurements to a test set.
pub fn fam_digest(fam: &Fam) -> String {
    let mut h = Sha256::new();
    for row in fam.rows() {
        for v in row {
            h.update(v.to_le_bytes());
        }
    }
    for l in fam.labels().unwrap_or(&[]) {
        h.update((*l as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn measure(model: &SemiSupervisedModel, test: &Fam) -> Result<Measurement> {
    let params = model.parameters();
    let enc = model.encoder_layers() as u32;
    let accuracy = evaluate(model, test)?.accuracy;
    let mut times = Vec::with_capacity(TIMING_RUNS);
    for _ in 0..TIMING_RUNS {
        let start = Instant::now();
        std::hint::black_box(predict_classes(model, test)?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(Measurement {
        serialized_size_bytes: params_serialize(&params).len(),
        compressed_size_bytes: compressed(&params),
        head_compressed_size_bytes: compressed(&params.filter(|i| i >= enc)),
        accuracy,
        inference_time_seconds: times[TIMING_RUNS / 2],
        parameter_count: model.param_count(),
        test_digest: fam_digest(test),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningReport {
    pub baseline: Measurement,
    pub pruned: Measurement,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Pair two measurements taken on the same test set.
pub fn compare(baseline: &Measurement, pruned: &Measurement) -> Result<PruningReport> {
    if baseline.test_digest != pruned.test_digest {
        return Err(Error::Data(
            "baseline and pruned models were measured on different test sets".into(),
        ));
    }
    Ok(PruningReport {
        baseline: baseline.clone(),
        pruned: pruned.clone(),
    })
}

impl PruningReport {
    /// Baseline over pruned compressed size.
    pub fn compressed_size_ratio(&self) -> f64 {
        ratio(
            self.baseline.compressed_size_bytes as f64,
            self.pruned.compressed_size_bytes as f64,
        )
    }

    pub fn head_compressed_size_ratio(&self) -> f64 {
        ratio(
            self.baseline.head_compressed_size_bytes as f64,
            self.pruned.head_compressed_size_bytes as f64,
        )
    }

    pub fn serialized_size_ratio(&self) -> f64 {
        ratio(
            self.baseline.serialized_size_bytes as f64,
            self.pruned.serialized_size_bytes as f64,
        )
    }

    pub fn parameter_ratio(&self) -> f64 {
        ratio(
            self.baseline.parameter_count as f64,
            self.pruned.parameter_count as f64,
        )
    }

    pub fn time_ratio(&self) -> f64 {
        ratio(
            self.baseline.inference_time_seconds,
            self.pruned.inference_time_seconds,
        )
    }

    pub fn accuracy_ratio(&self) -> f64 {
        ratio(self.baseline.accuracy, self.pruned.accuracy)
    }

    fn rows(&self) -> Vec<(&'static str, String, String, f64)> {
        let (b, p) = (&self.baseline, &self.pruned);
        vec![
            (
                "size_of_zipped_file_bytes",
                b.compressed_size_bytes.to_string(),
                p.compressed_size_bytes.to_string(),
                self.compressed_size_ratio(),
            ),
            (
                "accuracy_of_prediction",
                format!("{:.4}", b.accuracy),
                format!("{:.4}", p.accuracy),
                self.accuracy_ratio(),
            ),
            (
                "inference_time_seconds",
                format!("{:.6}", b.inference_time_seconds),
                format!("{:.6}", p.inference_time_seconds),
                self.time_ratio(),
            ),
            (
                "serialized_size_bytes",
                b.serialized_size_bytes.to_string(),
                p.serialized_size_bytes.to_string(),
                self.serialized_size_ratio(),
            ),
            (
                "head_zipped_size_bytes",
                b.head_compressed_size_bytes.to_string(),
                p.head_compressed_size_bytes.to_string(),
                self.head_compressed_size_ratio(),
            ),
            (
                "parameter_count",
                b.parameter_count.to_string(),
                p.parameter_count.to_string(),
                self.parameter_ratio(),
            ),
        ]
    }

    /// `metric,baseline,pruned,ratio`. The inference-time row is wall-clock
    /// and differs between runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,baseline,pruned,ratio\n");
        for (m, b, p, r) in self.rows() {
            let _ = writeln!(out, "{m},{b},{p},{r:.4}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let labels = [
            "Size of zipped file (bytes)",
            "Accuracy of prediction",
            "Inference time (s)",
            "Serialized size (bytes)",
            "Zipped size after encoder (bytes)",
            "Parameter count",
        ];
        let mut out = format!(
            "{:<34} {:>16} {:>16} {:>8}\n",
            "", "Baseline model", "Pruned model", "Ratio"
        );
        for (label, (_, b, p, r)) in labels.iter().zip(self.rows()) {
            let _ = writeln!(out, "{label:<34} {b:>16} {p:>16} {r:>8.3}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(size: usize, acc: f64, digest: &str) -> Measurement {
        Measurement {
            serialized_size_bytes: size * 2,
            compressed_size_bytes: size,
            head_compressed_size_bytes: size / 2,
            accuracy: acc,
            inference_time_seconds: 0.5,
            parameter_count: size / 8,
            test_digest: digest.into(),
        }
    }

    #[test]
    fn ratios_and_layout() {
        let r = compare(&m(3000, 0.75, "t"), &m(1000, 0.69, "t")).unwrap();
        assert_eq!(r.compressed_size_ratio(), 3.0);
        assert_eq!(r.time_ratio(), 1.0);
        let text = r.to_text();
        assert!(text.contains("Size of zipped file (bytes)"));
        assert!(text.contains("Accuracy of prediction"));
        assert!(text.contains("Inference time (s)"));
        assert!(r.to_csv().starts_with(
            "metric,baseline,pruned,ratio\nsize_of_zipped_file_bytes,3000,1000,3.0000\n"
        ));
        assert!(compare(&m(1, 0.5, "a"), &m(1, 0.5, "b")).is_err());
    }

    #[test]
    fn deflate_shrinks_redundant_input() {
        assert!(deflated_len(&[0u8; 4096]) < 64);
    }
}
