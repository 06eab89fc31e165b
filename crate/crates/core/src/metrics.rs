//! Per-instruction foundation metrics computed from one reward model's scores:
//! difficulty (negated mean), separability (variance) and stability (mean
//! within-family rank agreement between model size and reward).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InstructionRecord, ModelCatalog};

/// Divisor used for the score variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceDivisor {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1 (Bessel). A single score still has zero spread.
    Sample,
}

pub fn difficulty(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("no responses"));
    }
    Ok(-mean(scores))
}

pub fn separability(scores: &[f64]) -> Result<f64> {
    separability_with(scores, VarianceDivisor::Population)
}

pub fn separability_with(scores: &[f64], divisor: VarianceDivisor) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("no responses"));
    }
    let m = mean(scores);
    let ss: f64 = scores.iter().map(|s| (s - m) * (s - m)).sum();
    let n = scores.len() as f64;
    Ok(match divisor {
        VarianceDivisor::Population => ss / n,
        VarianceDivisor::Sample if scores.len() > 1 => ss / (n - 1.0),
        VarianceDivisor::Sample => 0.0,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Ranks with 1 = best; tied items share the average of the positions they span.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector(Vec<f64>);

impl RankVector {
    pub fn ranks(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn rank_vector(values: &[f64], higher_is_better: bool) -> Result<RankVector> {
    if values.is_empty() {
        return Err(Error::invalid("cannot rank an empty list"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        let o = values[*a].total_cmp(&values[*b]);
        if higher_is_better {
            o.reverse()
        } else {
            o
        }
    };
    order.sort_by(cmp);
    Ok(RankVector(average_ranks(&order, |a, b| values[a] == values[b])))
}

/// Assigns 1-based tie-averaged ranks given indices already sorted best-first.
pub(crate) fn average_ranks(order: &[usize], tied: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let mut ranks = vec![0.0; order.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && tied(order[start], order[end]) {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of two rank vectors. `None` when either side is fully
/// tied (zero variance).
pub fn spearman(ra: &RankVector, rb: &RankVector) -> Result<Option<f64>> {
    let (a, b) = (ra.ranks(), rb.ranks());
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "rank vectors differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least two items"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0)))
}

/// Mean over the record's families of the rank agreement between model size
/// (larger = better) and reward (higher = better).
///
/// Only families with at least two responses present take part. A family whose
/// sizes or scores are all tied contributes 0.
pub fn stability(record: &InstructionRecord, catalog: &ModelCatalog, reward_model: &str) -> Result<f64> {
    stability_opt(record, catalog, reward_model)?
        .ok_or_else(|| Error::invalid(format!("stability undefined for record {:?}", record.id)))
}

fn stability_opt(
    record: &InstructionRecord,
    catalog: &ModelCatalog,
    reward_model: &str,
) -> Result<Option<f64>> {
    let scores = record.scores(reward_model)?;
    let mut by_family: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (resp, score) in record.responses.iter().zip(scores) {
        let info = catalog.get(&resp.model_id).ok_or_else(|| {
            Error::validation(format!(
                "record {:?}: model {:?} not in catalog",
                record.id, resp.model_id
            ))
        })?;
        let entry = by_family.entry(info.family.as_str()).or_default();
        entry.0.push(info.params_b);
        entry.1.push(score);
    }

    let mut total = 0.0;
    let mut families = 0usize;
    for (sizes, fam_scores) in by_family.values() {
        if sizes.len() < 2 {
            continue;
        }
        let size_rank = rank_vector(sizes, true)?;
        let score_rank = rank_vector(fam_scores, true)?;
        total += spearman(&size_rank, &score_rank)?.unwrap_or(0.0);
        families += 1;
    }
    Ok((families > 0).then(|| total / families as f64))
}

/// Metric values for one instruction. `stability` is `None` when the record
/// has no family with two or more responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    #[serde(rename = "id")]
    pub instruction_id: String,
    pub difficulty: f64,
    pub separability: f64,
    pub stability: Option<f64>,
    pub multi: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stability_imputed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.instruction_id == id)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let rows: Vec<ScoreRow> = crate::io::read_jsonl(path)?;
        for r in &rows {
            if r.separability < 0.0 {
                return Err(Error::validation(format!(
                    "score row {:?}: negative separability",
                    r.instruction_id
                )));
            }
            if let Some(s) = r.stability {
                if !(-1.0..=1.0).contains(&s) {
                    return Err(Error::validation(format!(
                        "score row {:?}: stability {s} outside [-1, 1]",
                        r.instruction_id
                    )));
                }
            }
        }
        Ok(ScoreTable { rows })
    }

    pub fn write(&self, path: &Path) -> Result<usize> {
        crate::io::write_jsonl(path, &self.rows)
    }
}

pub fn score_record(
    record: &InstructionRecord,
    catalog: &ModelCatalog,
    reward_model: &str,
) -> Result<ScoreRow> {
    let scores = record.scores(reward_model)?;
    Ok(ScoreRow {
        instruction_id: record.id.clone(),
        difficulty: difficulty(&scores)?,
        separability: separability(&scores)?,
        stability: stability_opt(record, catalog, reward_model)?,
        multi: None,
        stability_imputed: false,
    })
}

/// Scores every record. Records are processed in parallel; rows come back in
/// input order.
pub fn score_dataset(
    records: &[InstructionRecord],
    catalog: &ModelCatalog,
    reward_model: &str,
) -> Result<ScoreTable> {
    let rows = records
        .par_iter()
        .map(|r| score_record(r, catalog, reward_model))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { rows })
}
