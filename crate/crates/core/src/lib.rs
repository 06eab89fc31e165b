//! Scoring and selection of instruction-tuning data from multi-model reward
//! scores.
//!
//! The pipeline: load a dataset of instructions answered by many generator
//! models ([`model`]), score every instruction with difficulty, separability
//! and stability ([`metrics`]), fold the three into one normalized multi-metric
//! ([`normalize`]), then pick a subset, optionally balanced across embedding
//! clusters ([`cluster`]), and emit SFT pairs ([`select`]). [`embed`] fetches
//! embeddings for datasets that ship without them.

pub mod cluster;
pub mod embed;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod select;
pub mod stats;

pub use error::{Error, Result};
pub use metrics::{ScoreRow, ScoreTable};
pub use model::{InstructionRecord, LoadMode, ModelCatalog, ModelInfo, ResponseEntry};
pub use normalize::Weights;
pub use select::{Direction, Metric, ResponseStrategy, SelectedPair, SelectionConfig};

/// Scores a dataset and fills the multi-metric. An empty dataset yields an
/// empty table.
pub fn score_and_aggregate(
    records: &[InstructionRecord],
    catalog: &ModelCatalog,
    reward_model: &str,
    weights: Weights,
) -> Result<ScoreTable> {
    let table = metrics::score_dataset(records, catalog, reward_model)?;
    if table.is_empty() {
        return Ok(table);
    }
    normalize::aggregate(&table, weights)
}
