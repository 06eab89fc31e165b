//! Summary report over a score table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_sizes, ClusterAssignment};
use crate::metrics::ScoreTable;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// Equal-width bins spanning [min, max]; the last bin is closed.
    pub histogram: Vec<usize>,
}

impl ColumnStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Some(ColumnStats {
            count: values.len(),
            min,
            max,
            mean,
            variance,
            histogram: histogram(values, HISTOGRAM_BINS),
        })
    }
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let bins = bins.max(1);
    let mut out = vec![0; bins];
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for &v in values {
        let idx = if span > 0.0 {
            (((v - lo) / span) * bins as f64) as usize
        } else {
            0
        };
        out[idx.min(bins - 1)] += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub records: usize,
    pub rows: usize,
    pub difficulty: Option<ColumnStats>,
    pub separability: Option<ColumnStats>,
    /// Over rows with a defined stability only.
    pub stability: Option<ColumnStats>,
    pub multi: Option<ColumnStats>,
    pub stability_undefined: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<BTreeMap<usize, usize>>,
}

pub fn build_report(
    records: usize,
    table: &ScoreTable,
    assignments: Option<&[ClusterAssignment]>,
) -> StatsReport {
    let col = |f: &dyn Fn(&crate::metrics::ScoreRow) -> Option<f64>| {
        let v: Vec<f64> = table.rows.iter().filter_map(f).collect();
        ColumnStats::from_values(&v)
    };
    StatsReport {
        records,
        rows: table.len(),
        difficulty: col(&|r| Some(r.difficulty)),
        separability: col(&|r| Some(r.separability)),
        stability: col(&|r| r.stability),
        multi: col(&|r| r.multi),
        stability_undefined: table.rows.iter().filter(|r| r.stability.is_none()).count(),
        cluster_sizes: assignments.map(cluster_sizes),
    }
}
