//! Per-flow statistics.
//!
//! The default schema computes 33 statistics and zero-pads to 78 columns so
//! vectors have the same width as CICFlowMeter exports. CSVs loaded with their
//! native columns carry a different `schema_id`, and the two never mix.

use super::flow::{Direction, Flow};
use crate::error::{Error, Result};

pub const DEFAULT_SCHEMA_ID: &str = "fededge-flow-v1";
pub const DEFAULT_WIDTH: usize = 78;

/// Names of the computed (non-padding) default features, in column order.
/// `flow_iat_max` is the longest idle gap between neighbouring packets.
pub const DEFAULT_FEATURES: [&str; 33] = [
    "flow_duration",
    "tot_pkts",
    "fwd_pkts",
    "bwd_pkts",
    "tot_bytes",
    "fwd_bytes",
    "bwd_bytes",
    "pkt_len_min",
    "pkt_len_max",
    "pkt_len_mean",
    "pkt_len_std",
    "fwd_pkt_len_min",
    "fwd_pkt_len_max",
    "fwd_pkt_len_mean",
    "fwd_pkt_len_std",
    "bwd_pkt_len_min",
    "bwd_pkt_len_max",
    "bwd_pkt_len_mean",
    "bwd_pkt_len_std",
    "flow_iat_min",
    "flow_iat_max",
    "flow_iat_mean",
    "flow_iat_std",
    "fwd_iat_min",
    "fwd_iat_max",
    "fwd_iat_mean",
    "fwd_iat_std",
    "bwd_iat_min",
    "bwd_iat_max",
    "bwd_iat_mean",
    "bwd_iat_std",
    "flow_bytes_per_sec",
    "flow_pkts_per_sec",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub id: String,
    pub columns: Vec<String>,
}

impl FeatureSchema {
    pub fn default_flow() -> Self {
        let mut columns: Vec<String> = DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect();
        for i in columns.len()..DEFAULT_WIDTH {
            columns.push(format!("pad_{i}"));
        }
        Self {
            id: DEFAULT_SCHEMA_ID.to_string(),
            columns,
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::default_flow()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowFeatureVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

/// `[min, max, mean, population std]`; all zero for an empty slice.
fn summary(xs: &[f64]) -> [f64; 4] {
    if xs.is_empty() {
        return [0.0; 4];
    }
    let n = xs.len() as f64;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    [min, max, mean, var.sqrt()]
}

fn gaps(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn compute_features(flow: &Flow, schema: &FeatureSchema) -> Result<FlowFeatureVector> {
    if flow.packets.is_empty() {
        return Err(Error::Empty("flow has no packets"));
    }
    if schema.id != DEFAULT_SCHEMA_ID {
        return Err(Error::Config(format!(
            "schema {:?} cannot be computed from packets; only {DEFAULT_SCHEMA_ID} is",
            schema.id
        )));
    }
    let pk = &flow.packets;
    let dir = |d: Direction| pk.iter().filter(move |p| p.direction == d);
    let lens: Vec<f64> = pk.iter().map(|p| p.length as f64).collect();
    let fwd_lens: Vec<f64> = dir(Direction::Forward).map(|p| p.length as f64).collect();
    let bwd_lens: Vec<f64> = dir(Direction::Backward).map(|p| p.length as f64).collect();
    let times: Vec<f64> = pk.iter().map(|p| p.timestamp).collect();
    let fwd_times: Vec<f64> = dir(Direction::Forward).map(|p| p.timestamp).collect();
    let bwd_times: Vec<f64> = dir(Direction::Backward).map(|p| p.timestamp).collect();

    let duration = times[times.len() - 1] - times[0];
    let tot_bytes: f64 = lens.iter().sum();
    let (bytes_rate, pkts_rate) = if duration > 0.0 {
        (tot_bytes / duration, lens.len() as f64 / duration)
    } else {
        (0.0, 0.0)
    };

    let mut v = Vec::with_capacity(DEFAULT_WIDTH);
    v.push(duration);
    v.extend([
        lens.len() as f64,
        fwd_lens.len() as f64,
        bwd_lens.len() as f64,
    ]);
    v.extend([tot_bytes, fwd_lens.iter().sum(), bwd_lens.iter().sum()]);
    v.extend(summary(&lens));
    v.extend(summary(&fwd_lens));
    v.extend(summary(&bwd_lens));
    v.extend(summary(&gaps(&times)));
    v.extend(summary(&gaps(&fwd_times)));
    v.extend(summary(&gaps(&bwd_times)));
    v.extend([bytes_rate, pkts_rate]);
    debug_assert_eq!(v.len(), DEFAULT_FEATURES.len());
    v.resize(schema.width(), 0.0);
    Ok(FlowFeatureVector {
        values: v,
        schema_id: schema.id.clone(),
    })
}
