//! Three-stage column normalization (standardize, min-max, quantile) and the
//! weighted multi-metric.
//!
//! Each stage is total: a zero-variance column standardizes to zeros, a
//! zero-range column scales to 0.5, and a one-element column quantile-maps to
//! 0.5. Because the first two stages are increasing affine maps, the composed
//! pipeline depends only on the ranks of the raw column.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{average_ranks, ScoreTable};

pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    non_empty(values)?;
    if is_constant(values) {
        return Ok(vec![0.0; values.len()]);
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let sigma = (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    if sigma == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mu) / sigma).collect())
}

pub fn minmax(values: &[f64]) -> Result<Vec<f64>> {
    non_empty(values)?;
    let (lo, hi) = bounds(values);
    if hi == lo {
        return Ok(vec![0.5; values.len()]);
    }
    let span = hi - lo;
    Ok(values.iter().map(|v| (v - lo) / span).collect())
}

/// Empirical-rank map onto [0, 1]: `(avg_rank - 1) / (n - 1)` with ascending,
/// tie-averaged ranks. The largest value maps to 1.
pub fn quantile_transform(values: &[f64]) -> Result<Vec<f64>> {
    non_empty(values)?;
    let n = values.len();
    if n == 1 {
        return Ok(vec![0.5]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let ranks = average_ranks(&order, |a, b| values[a] == values[b]);
    let denom = (n - 1) as f64;
    Ok(ranks.into_iter().map(|r| (r - 1.0) / denom).collect())
}

fn non_empty(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        Err(Error::invalid("cannot normalize an empty column"))
    } else {
        Ok(())
    }
}

fn bounds(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|v| *v == values[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedColumn {
    pub metric_name: String,
    pub values: Vec<f64>,
}

/// Runs the three stages over one raw metric column.
pub fn normalize_column(metric_name: &str, raw: &[f64]) -> Result<NormalizedColumn> {
    let values = quantile_transform(&minmax(&zscore(raw)?)?)?;
    Ok(NormalizedColumn {
        metric_name: metric_name.to_string(),
        values,
    })
}

/// Per-metric weights for the multi-metric, in the order difficulty,
/// separability, stability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub difficulty: f64,
    pub separability: f64,
    pub stability: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            difficulty: 1.0,
            separability: 1.0,
            stability: 2.0,
        }
    }
}

impl Weights {
    pub fn new(difficulty: f64, separability: f64, stability: f64) -> Self {
        Weights {
            difficulty,
            separability,
            stability,
        }
    }

    pub fn combine(&self, rho: [f64; 3]) -> f64 {
        self.difficulty * rho[0] + self.separability * rho[1] + self.stability * rho[2]
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.difficulty, self.separability, self.stability)
    }
}

impl FromStr for Weights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("weights {s:?}: {e}")))?;
        match parts[..] {
            [d, sep, st] if parts.iter().all(|w| w.is_finite()) => Ok(Weights::new(d, sep, st)),
            _ => Err(Error::invalid(format!(
                "weights {s:?}: expected three finite numbers like 1,1,2"
            ))),
        }
    }
}

/// The normalized columns behind a multi-metric, row-aligned with the table.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTable {
    pub difficulty: NormalizedColumn,
    pub separability: NormalizedColumn,
    pub stability: NormalizedColumn,
}

/// Normalizes all three metric columns. Rows with undefined stability are
/// left out of the stability ranking and placed at the median (0.5).
pub fn normalize_table(table: &ScoreTable) -> Result<NormalizedTable> {
    if table.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty score table"));
    }
    let diff: Vec<f64> = table.rows.iter().map(|r| r.difficulty).collect();
    let sep: Vec<f64> = table.rows.iter().map(|r| r.separability).collect();

    let ((d, s), st) = rayon::join(
        || {
            rayon::join(
                || normalize_column("difficulty", &diff),
                || normalize_column("separability", &sep),
            )
        },
        || normalize_stability(table),
    );
    Ok(NormalizedTable {
        difficulty: d?,
        separability: s?,
        stability: st?,
    })
}

fn normalize_stability(table: &ScoreTable) -> Result<NormalizedColumn> {
    let defined: Vec<f64> = table.rows.iter().filter_map(|r| r.stability).collect();
    let mut values = vec![0.5; table.len()];
    if !defined.is_empty() {
        let rho = normalize_column("stability", &defined)?.values;
        let mut it = rho.into_iter();
        for (slot, row) in values.iter_mut().zip(&table.rows) {
            if row.stability.is_some() {
                *slot = it.next().expect("one rho per defined row");
            }
        }
    }
    Ok(NormalizedColumn {
        metric_name: "stability".into(),
        values,
    })
}

/// Fills the `multi` column with the weighted sum of the normalized metrics.
pub fn aggregate(table: &ScoreTable, weights: Weights) -> Result<ScoreTable> {
    let norm = normalize_table(table)?;
    let mut out = table.clone();
    for (i, row) in out.rows.iter_mut().enumerate() {
        row.multi = Some(weights.combine([
            norm.difficulty.values[i],
            norm.separability.values[i],
            norm.stability.values[i],
        ]));
        row.stability_imputed = row.stability.is_none();
    }
    Ok(out)
}
