use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-column `(min, max)` captured from training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    /// Min-max scale `x` into `[0, 1]`, clamping values outside the training
    /// range. Constant columns map to 0.
    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    ((v - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `column,min,max` lines.
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        for ((c, lo), hi) in self.columns.iter().zip(&self.min).zip(&self.max) {
            writeln!(s, "{c},{lo},{hi}").unwrap();
        }
        s
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let mut stats = Self {
            columns: Vec::new(),
            min: Vec::new(),
            max: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.rsplitn(3, ',');
            let (hi, lo, name) = (parts.next(), parts.next(), parts.next());
            let parse = |s: Option<&str>| s.and_then(|s| s.trim().parse::<f64>().ok());
            match (name, parse(lo), parse(hi)) {
                (Some(name), Some(lo), Some(hi)) => {
                    stats.columns.push(name.to_string());
                    stats.min.push(lo);
                    stats.max.push(hi);
                }
                _ => {
                    return Err(Error::Data(format!(
                        "normalization sidecar line {}: {line:?}",
                        i + 1
                    )))
                }
            }
        }
        Ok(stats)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_sidecar(&text)
    }
}

/// Flow attribute matrix: one feature row per flow, optionally labeled.
///
/// With labels it plays the role of the labeled matrix held by the server;
/// without, the unlabeled matrix held by an edge client.
#[derive(Debug, Clone, PartialEq)]
pub struct Fam {
    schema_id: String,
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    class_names: Vec<String>,
    normalization: Option<NormalizationStats>,
}

impl Fam {
    pub fn new(
        schema_id: impl Into<String>,
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let width = feature_names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Dimension {
                expected: vec![width],
                found: vec![rows[i].len()],
            });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature values must be finite".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != rows.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    rows.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
                return Err(Error::Data(format!(
                    "label {bad} outside [0, {})",
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            schema_id: schema_id.into(),
            feature_names,
            rows,
            labels,
            class_names,
            normalization: None,
        })
    }

    pub fn unlabeled(
        schema_id: impl Into<String>,
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(schema_id, feature_names, rows, None, Vec::new())
    }

    pub fn with_normalization(mut self, stats: NormalizationStats) -> Self {
        self.normalization = Some(stats);
        self
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an error naming `what` for an unlabeled matrix.
    pub fn require_labels(&self, what: &'static str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data(format!("{what} requires a labeled matrix")))
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn normalization(&self) -> Option<&NormalizationStats> {
        self.normalization.as_ref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Rows at `indices`, in that order, keeping labels, classes and stats.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            schema_id: self.schema_id.clone(),
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Scale with previously computed statistics (clamping to `[0, 1]`).
    pub fn apply_normalization(&self, stats: &NormalizationStats) -> Result<Self> {
        if stats.columns.len() != self.width() {
            return Err(Error::Dimension {
                expected: vec![stats.columns.len()],
                found: vec![self.width()],
            });
        }
        let mut out = self.clone();
        out.rows = self.rows.iter().map(|r| stats.apply_row(r)).collect();
        out.normalization = Some(stats.clone());
        Ok(out)
    }

    /// Stack `other` below `self`; schemas must agree.
    pub fn concat(&self, other: &Fam) -> Result<Self> {
        if self.schema_id != other.schema_id || self.feature_names != other.feature_names {
            return Err(Error::Data(
                "cannot concatenate matrices with different schemas".into(),
            ));
        }
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) if self.class_names == other.class_names => {
                Some(a.iter().chain(b).copied().collect())
            }
            (None, None) => None,
            _ => {
                return Err(Error::Data(
                    "cannot concatenate labeled with unlabeled or differently-classed matrices"
                        .into(),
                ))
            }
        };
        let mut out = self.clone();
        out.rows.extend(other.rows.iter().cloned());
        out.labels = labels;
        Ok(out)
    }

    /// Stack two labeled matrices whose class numbering may differ (e.g. CSV
    /// files loaded separately), matching classes by name. Classes new to
    /// `self` are appended in order of first appearance.
    pub fn concat_merging_classes(&self, other: &Fam) -> Result<Self> {
        if self.schema_id != other.schema_id || self.feature_names != other.feature_names {
            return Err(Error::Data(
                "cannot concatenate matrices with different schemas".into(),
            ));
        }
        let (Some(a), Some(b)) = (&self.labels, &other.labels) else {
            return Err(Error::Data(
                "merging classes needs two labeled matrices".into(),
            ));
        };
        let mut class_names = self.class_names.clone();
        let mut labels = a.clone();
        for &l in b {
            let name = &other.class_names[l];
            let idx = match class_names.iter().position(|n| n == name) {
                Some(i) => i,
                None => {
                    class_names.push(name.clone());
                    class_names.len() - 1
                }
            };
            labels.push(idx);
        }
        let mut out = self.clone();
        out.rows.extend(other.rows.iter().cloned());
        out.labels = Some(labels);
        out.class_names = class_names;
        Ok(out)
    }
}

/// Per-column min-max scaling to `[0, 1]`, fitted on `fam` itself.
pub fn normalize(fam: &Fam) -> Result<Fam> {
    if fam.is_empty() {
        return Err(Error::Empty("normalize needs at least one row"));
    }
    let w = fam.width();
    let mut min = vec![f64::INFINITY; w];
    let mut max = vec![f64::NEG_INFINITY; w];
    for r in fam.rows() {
        for (j, &v) in r.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    let stats = NormalizationStats {
        columns: fam.feature_names.clone(),
        min,
        max,
    };
    fam.apply_normalization(&stats)
}

pub fn strip_labels(fam: &Fam) -> Fam {
    let mut out = fam.clone();
    out.labels = None;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(vals: &[f64]) -> Fam {
        Fam::unlabeled(
            "t",
            vec!["c".into()],
            vals.iter().map(|&v| vec![v]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn endpoints_map_to_unit_interval() {
        let n = normalize(&column(&[2.0, 4.0, 6.0])).unwrap();
        let got: Vec<f64> = n.rows().iter().map(|r| r[0]).collect();
        assert_eq!(got, [0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let n = normalize(&column(&[5.0, 5.0, 5.0])).unwrap();
        assert!(n.rows().iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn stored_stats_clamp_unseen_values() {
        let n = normalize(&column(&[2.0, 4.0, 6.0])).unwrap();
        let test = column(&[10.0, -3.0, 5.0])
            .apply_normalization(n.normalization().unwrap())
            .unwrap();
        let got: Vec<f64> = test.rows().iter().map(|r| r[0]).collect();
        assert_eq!(got, [1.0, 0.0, 0.75]);
    }

    #[test]
    fn sidecar_round_trip() {
        let stats = NormalizationStats {
            columns: vec!["a".into(), "b,c".into()],
            min: vec![0.1, -2.0],
            max: vec![3.0, 1e300],
        };
        assert_eq!(
            NormalizationStats::from_sidecar(&stats.to_sidecar()).unwrap(),
            stats
        );
        assert!(NormalizationStats::from_sidecar("x,1").is_err());
    }

    #[test]
    fn strip_labels_keeps_rows_and_classes() {
        let fam = Fam::new(
            "t",
            vec!["x".into()],
            vec![vec![0.25], vec![-1.5]],
            Some(vec![1, 0]),
            vec!["video".into(), "game".into()],
        )
        .unwrap();
        let u = strip_labels(&fam);
        assert!(u.labels().is_none());
        assert_eq!(u.rows(), fam.rows());
        assert_eq!(u.class_names(), fam.class_names());
    }

    #[test]
    fn rejects_bad_labels_and_widths() {
        assert!(Fam::new(
            "t",
            vec!["x".into()],
            vec![vec![0.0]],
            Some(vec![3]),
            vec!["a".into()]
        )
        .is_err());
        assert!(Fam::new("t", vec!["x".into()], vec![vec![0.0, 1.0]], None, vec![]).is_err());
        assert!(Fam::new("t", vec!["x".into()], vec![vec![f64::NAN]], None, vec![]).is_err());
    }

    #[test]
    fn concat_merging_classes_matches_by_name() {
        let names = vec!["f".to_string()];
        let a = Fam::new(
            "s",
            names.clone(),
            vec![vec![0.0], vec![1.0]],
            Some(vec![0, 1]),
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let b = Fam::new(
            "s",
            names,
            vec![vec![2.0], vec![3.0]],
            Some(vec![0, 1]),
            vec!["y".into(), "z".into()],
        )
        .unwrap();
        let m = a.concat_merging_classes(&b).unwrap();
        assert_eq!(m.class_names(), ["x", "y", "z"]);
        assert_eq!(m.labels().unwrap(), [0, 1, 1, 2]);
        assert!(a.concat_merging_classes(&strip_labels(&b)).is_err());
    }
}
