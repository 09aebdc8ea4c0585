use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::shap::{local_explain, LocalExplanation, Predictor, ShapConfig};
use crate::data::Fam;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    /// Mean |φ| over samples; signed sums can cancel.
    #[default]
    MeanAbs,
    /// Σ_i φ_ij, the literal aggregate.
    SignedSum,
}

/// The M×p matrix of local explanations.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapMatrix {
    pub explanations: Vec<LocalExplanation>,
}

impl ShapMatrix {
    pub fn num_features(&self) -> usize {
        self.explanations.first().map_or(0, |e| e.phi.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalImportance {
    pub feature_names: Vec<String>,
    pub signed_sum: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub rank_by: RankBy,
    /// Feature indices, most important first.
    pub ranking: Vec<usize>,
}

impl GlobalImportance {
    pub fn from_matrix(
        matrix: &ShapMatrix,
        feature_names: Vec<String>,
        rank_by: RankBy,
    ) -> Result<Self> {
        let p = matrix.num_features();
        if matrix.explanations.is_empty() {
            return Err(Error::Empty("SHAP matrix"));
        }
        if feature_names.len() != p {
            return Err(Error::Dimension {
                expected: vec![p],
                found: vec![feature_names.len()],
            });
        }
        let mut signed_sum = vec![0.0; p];
        let mut abs_sum = vec![0.0; p];
        for e in &matrix.explanations {
            for (j, &v) in e.phi.iter().enumerate() {
                signed_sum[j] += v;
                abs_sum[j] += v.abs();
            }
        }
        let m = matrix.explanations.len() as f64;
        let mean_abs: Vec<f64> = abs_sum.iter().map(|s| s / m).collect();
        let stat = match rank_by {
            RankBy::MeanAbs => &mean_abs,
            RankBy::SignedSum => &signed_sum,
        };
        let mut ranking: Vec<usize> = (0..p).collect();
        ranking.sort_by(|&a, &b| stat[b].total_cmp(&stat[a]).then(a.cmp(&b)));
        Ok(Self {
            feature_names,
            signed_sum,
            mean_abs,
            rank_by,
            ranking,
        })
    }

    pub fn statistic(&self, j: usize) -> f64 {
        match self.rank_by {
            RankBy::MeanAbs => self.mean_abs[j],
            RankBy::SignedSum => self.signed_sum[j],
        }
    }
}

/// Explain every row of `samples` and aggregate.
pub fn global_importance(
    model: &impl Predictor,
    samples: &Fam,
    config: &ShapConfig,
    rank_by: RankBy,
) -> Result<(GlobalImportance, ShapMatrix)> {
    if samples.is_empty() {
        return Err(Error::Empty("explanation samples"));
    }
    let explanations = samples
        .rows()
        .iter()
        .enumerate()
        .map(|(i, x)| local_explain(model, x, i, config))
        .collect::<Result<Vec<_>>>()?;
    let matrix = ShapMatrix { explanations };
    let global = GlobalImportance::from_matrix(&matrix, samples.feature_names().to_vec(), rank_by)?;
    Ok((global, matrix))
}

/// CSV of the `top_n` features: name, ranking statistic, rank, both
/// aggregates, then mean |φ| restricted to rows whose explained output was
/// each class (one column per class name).
pub fn summary_csv(
    global: &GlobalImportance,
    matrix: &ShapMatrix,
    class_names: &[String],
    top_n: usize,
) -> String {
    let mut out = String::from("feature,statistic,rank,signed_sum,mean_abs");
    for c in class_names {
        let _ = write!(out, ",mean_abs_{c}");
    }
    out.push('\n');
    let mut per_class = vec![vec![0.0; global.feature_names.len()]; class_names.len()];
    let mut counts = vec![0usize; class_names.len()];
    for e in &matrix.explanations {
        if let Some(row) = per_class.get_mut(e.target_index) {
            counts[e.target_index] += 1;
            for (a, v) in row.iter_mut().zip(&e.phi) {
                *a += v.abs();
            }
        }
    }
    for (rank, &j) in global.ranking.iter().take(top_n).enumerate() {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            global.feature_names[j],
            global.statistic(j),
            rank + 1,
            global.signed_sum[j],
            global.mean_abs[j]
        );
        for (c, row) in per_class.iter().enumerate() {
            let v = if counts[c] == 0 {
                0.0
            } else {
                row[j] / counts[c] as f64
            };
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn export_summary(
    global: &GlobalImportance,
    matrix: &ShapMatrix,
    class_names: &[String],
    top_n: usize,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, summary_csv(global, matrix, class_names, top_n))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expl(phi: Vec<f64>, target_index: usize) -> LocalExplanation {
        LocalExplanation {
            sample_index: 0,
            target_index,
            phi,
            base_value: 0.0,
            prediction: 0.0,
        }
    }

    #[test]
    fn aggregates_and_ranking() {
        let m = ShapMatrix {
            explanations: vec![expl(vec![1.0, -3.0, 0.0], 0), expl(vec![1.0, 3.0, 0.0], 1)],
        };
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        let g = GlobalImportance::from_matrix(&m, names.clone(), RankBy::MeanAbs).unwrap();
        assert_eq!(g.signed_sum, [2.0, 0.0, 0.0]);
        assert_eq!(g.mean_abs, [1.0, 3.0, 0.0]);
        assert_eq!(g.ranking, [1, 0, 2]);
        let s = GlobalImportance::from_matrix(&m, names, RankBy::SignedSum).unwrap();
        assert_eq!(s.ranking, [0, 1, 2]);
    }

    #[test]
    fn csv_layout() {
        let m = ShapMatrix {
            explanations: vec![expl(vec![1.0, -3.0], 0), expl(vec![0.5, 1.0], 1)],
        };
        let g = GlobalImportance::from_matrix(&m, vec!["a".into(), "b".into()], RankBy::MeanAbs)
            .unwrap();
        let csv = summary_csv(&g, &m, &["x".into(), "y".into()], 10);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "feature,statistic,rank,signed_sum,mean_abs,mean_abs_x,mean_abs_y"
        );
        assert_eq!(lines[1], "b,2,1,-2,2,3,1");
        assert_eq!(lines[2], "a,0.75,2,1.5,0.75,1,0.5");
        assert_eq!(summary_csv(&g, &m, &[], 1).lines().count(), 2);
    }
}
