//! Instruction ranking, response choice, rule baselines and SFT emission.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{balanced_select, kmeans, ClusterAssignment, KMeansParams};
use crate::error::{Error, Result};
use crate::metrics::ScoreTable;
use crate::model::{InstructionRecord, ResponseEntry};
use crate::normalize::Weights;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::invalid(format!(
                        "unknown {} {other:?} (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Highest score first.
    #[default]
    Top,
    /// Lowest score first.
    Bottom,
}
string_enum!(Direction { Top => "top", Bottom => "bottom" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Difficulty,
    Separability,
    Stability,
    #[default]
    Multi,
    Random,
    Length,
}
string_enum!(Metric {
    Difficulty => "difficulty",
    Separability => "separability",
    Stability => "stability",
    Multi => "multi",
    Random => "random",
    Length => "length",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStrategy {
    #[default]
    Best,
    Random,
    Top5Random,
}
string_enum!(ResponseStrategy { Best => "best", Random => "random", Top5Random => "top5_random" });

fn order_by(direction: Direction, a: (&str, f64), b: (&str, f64)) -> Ordering {
    let by_score = match direction {
        Direction::Top => b.1.total_cmp(&a.1),
        Direction::Bottom => a.1.total_cmp(&b.1),
    };
    by_score.then_with(|| a.0.cmp(b.0))
}

/// All ids ordered by score in `direction`, ties broken by id.
pub fn ranked_ids(scores: &HashMap<String, f64>, direction: Direction) -> Vec<&String> {
    let mut ids: Vec<&String> = scores.keys().collect();
    ids.sort_by(|a, b| order_by(direction, (a, scores[*a]), (b, scores[*b])));
    ids
}

pub fn top_k(scores: &HashMap<String, f64>, k: usize, direction: Direction) -> Result<Vec<String>> {
    check_k(k, scores.len())?;
    Ok(ranked_ids(scores, direction)
        .into_iter()
        .take(k)
        .cloned()
        .collect())
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > available {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the number of candidates ({available})"
        )));
    }
    Ok(())
}

/// PRNG for one record, keyed by the run seed and the instruction id so a
/// draw does not depend on where the record sits in the dataset.
pub fn record_rng(seed: u64, instruction_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(instruction_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn choose_response<'a>(
    record: &'a InstructionRecord,
    strategy: ResponseStrategy,
    reward_model: &str,
    seed: u64,
) -> Result<&'a ResponseEntry> {
    use rand::seq::IndexedRandom;

    let scores = record.scores(reward_model)?;
    let mut ranked: Vec<(&ResponseEntry, f64)> = record.responses.iter().zip(scores).collect();
    if ranked.is_empty() {
        return Err(Error::invalid(format!("record {:?} has no responses", record.id)));
    }
    // best first; equal rewards go to the lexicographically smaller model id
    ranked.sort_by(|a, b| order_by(Direction::Top, (&a.0.model_id, a.1), (&b.0.model_id, b.1)));

    let pool = match strategy {
        ResponseStrategy::Best => return Ok(ranked[0].0),
        ResponseStrategy::Random => &ranked[..],
        ResponseStrategy::Top5Random => &ranked[..ranked.len().min(5)],
    };
    let mut rng = record_rng(seed, &record.id);
    Ok(pool.choose(&mut rng).expect("non-empty pool").0)
}

/// Uniform sample of `k` ids without replacement. The draw depends on the
/// set of ids and the seed, not on record order.
pub fn random_baseline(records: &[InstructionRecord], k: usize, seed: u64) -> Result<Vec<String>> {
    check_k(k, records.len())?;
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, ids.len(), k)
        .into_iter()
        .map(|i| ids[i].to_string())
        .collect())
}

/// Whitespace-token count, a tokenizer-free stand-in for instruction length.
pub fn token_length(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn length_baseline(
    records: &[InstructionRecord],
    k: usize,
    direction: Direction,
) -> Result<Vec<String>> {
    top_k(&length_scores(records), k, direction)
}

fn length_scores(records: &[InstructionRecord]) -> HashMap<String, f64> {
    records
        .iter()
        .map(|r| (r.id.clone(), token_length(&r.instruction) as f64))
        .collect()
}

/// An instruction with its chosen response and the values that put it there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPair {
    pub instruction_id: String,
    pub instruction: String,
    pub response_text: String,
    pub response_model: String,
    pub metric: Metric,
    /// The value the instruction was ranked by (the draw position for the
    /// random baseline).
    pub metric_value: f64,
    pub cluster_id: Option<usize>,
    pub strategy: ResponseStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub instruction_id: String,
    pub response_model: String,
    pub metric: Metric,
    pub metric_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    pub strategy: ResponseStrategy,
    pub seed: u64,
}

/// One line of the SFT output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub instruction: String,
    pub output: String,
    pub meta: SftMeta,
}

impl From<&SelectedPair> for SftExample {
    fn from(p: &SelectedPair) -> Self {
        SftExample {
            instruction: p.instruction.clone(),
            output: p.response_text.clone(),
            meta: SftMeta {
                instruction_id: p.instruction_id.clone(),
                response_model: p.response_model.clone(),
                metric: p.metric,
                metric_value: p.metric_value,
                cluster_id: p.cluster_id,
                strategy: p.strategy,
                seed: p.seed,
            },
        }
    }
}

pub fn emit_sft(pairs: &[SelectedPair], path: &Path) -> Result<usize> {
    let examples: Vec<SftExample> = pairs.iter().map(SftExample::from).collect();
    if let Some(bad) = examples.iter().find(|e| e.instruction.is_empty() || e.output.is_empty()) {
        return Err(Error::validation(format!(
            "instruction {:?}: empty instruction or output",
            bad.meta.instruction_id
        )));
    }
    crate::io::write_jsonl(path, &examples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub metric: Metric,
    pub direction: Direction,
    pub k: usize,
    pub weights: Weights,
    /// 0 disables clustering.
    pub n_clusters: usize,
    pub response_strategy: ResponseStrategy,
    pub reward_model: String,
    pub seed: u64,
}

impl SelectionConfig {
    pub fn new(reward_model: impl Into<String>) -> Self {
        SelectionConfig {
            metric: Metric::Multi,
            direction: Direction::Top,
            k: 1000,
            weights: Weights::default(),
            n_clusters: 10,
            response_strategy: ResponseStrategy::Best,
            reward_model: reward_model.into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub pairs: Vec<SelectedPair>,
    /// Cluster membership of every record, when clustering ran.
    pub assignments: Option<Vec<ClusterAssignment>>,
}

/// Ranks the records by the configured metric (cluster-balanced when
/// `n_clusters > 0`), takes `k` of them and picks one response for each.
///
/// Records whose stability is undefined are not candidates when ranking by
/// stability.
pub fn run_selection(
    records: &[InstructionRecord],
    table: &ScoreTable,
    config: &SelectionConfig,
) -> Result<Selection> {
    if config.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let scores = metric_scores(records, table, config.metric)?;

    let assignments = if config.n_clusters > 0 {
        let mut points = Vec::with_capacity(records.len());
        for r in records {
            let e = r.embedding.as_ref().ok_or_else(|| {
                Error::validation(format!(
                    "record {:?} has no embedding; clustering needs embeddings for every record",
                    r.id
                ))
            })?;
            points.push((r.id.clone(), e.clone()));
        }
        if config.n_clusters > points.len() {
            return Err(Error::invalid(format!(
                "{} clusters requested for {} records",
                config.n_clusters,
                points.len()
            )));
        }
        Some(kmeans(&points, KMeansParams::new(config.n_clusters, config.seed))?)
    } else {
        None
    };

    let (ids, values): (Vec<String>, HashMap<String, f64>) = match (&scores, &assignments) {
        (None, _) => {
            let ids = random_baseline(records, config.k, config.seed)?;
            let values = ids.iter().enumerate().map(|(i, id)| (id.clone(), (i + 1) as f64)).collect();
            (ids, values)
        }
        (Some(s), Some(a)) => {
            let pool: Vec<ClusterAssignment> =
                a.iter().filter(|x| s.contains_key(&x.instruction_id)).cloned().collect();
            check_k(config.k, pool.len())?;
            (balanced_select(&pool, s, config.k, config.direction)?, s.clone())
        }
        (Some(s), None) => (top_k(s, config.k, config.direction)?, s.clone()),
    };

    let by_id: HashMap<&str, &InstructionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let cluster_of: HashMap<&str, usize> = assignments
        .iter()
        .flatten()
        .map(|a| (a.instruction_id.as_str(), a.cluster_id))
        .collect();

    let pairs = ids
        .iter()
        .map(|id| {
            let record = by_id[id.as_str()];
            let resp = choose_response(record, config.response_strategy, &config.reward_model, config.seed)?;
            Ok(SelectedPair {
                instruction_id: id.clone(),
                instruction: record.instruction.clone(),
                response_text: resp.text.clone(),
                response_model: resp.model_id.clone(),
                metric: config.metric,
                metric_value: values[id],
                cluster_id: cluster_of.get(id.as_str()).copied(),
                strategy: config.response_strategy,
                seed: config.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Selection { pairs, assignments })
}

/// Ranking values per record id, or `None` for the random baseline.
fn metric_scores(
    records: &[InstructionRecord],
    table: &ScoreTable,
    metric: Metric,
) -> Result<Option<HashMap<String, f64>>> {
    match metric {
        Metric::Random => return Ok(None),
        Metric::Length => return Ok(Some(length_scores(records))),
        _ => {}
    }
    let rows: HashMap<&str, &crate::metrics::ScoreRow> =
        table.rows.iter().map(|r| (r.instruction_id.as_str(), r)).collect();
    let mut out = HashMap::with_capacity(records.len());
    for r in records {
        let row = rows
            .get(r.id.as_str())
            .ok_or_else(|| Error::validation(format!("no score row for record {:?}", r.id)))?;
        let value = match metric {
            Metric::Difficulty => Some(row.difficulty),
            Metric::Separability => Some(row.separability),
            Metric::Stability => row.stability,
            Metric::Multi => Some(row.multi.ok_or_else(|| {
                Error::validation(format!(
                    "score row {:?} has no multi value; rerun scoring with weights",
                    r.id
                ))
            })?),
            Metric::Random | Metric::Length => unreachable!(),
        };
        if let Some(v) = value {
            out.insert(r.id.clone(), v);
        }
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn scores(v: &[(&str, f64)]) -> HashMap<String, f64> {
        v.iter().map(|(k, s)| (k.to_string(), *s)).collect()
    }

    fn rec(id: &str, instruction: &str, rewards: &[(&str, f64)]) -> InstructionRecord {
        InstructionRecord {
            id: id.into(),
            instruction: instruction.into(),
            responses: rewards
                .iter()
                .map(|(m, s)| ResponseEntry {
                    model_id: m.to_string(),
                    text: format!("{m} says hi"),
                    rewards: BTreeMap::from([("rm".to_string(), *s)]),
                })
                .collect(),
            embedding: None,
        }
    }

    #[test]
    fn top_k_examples() {
        let s = scores(&[("a", 3.0), ("b", 1.0), ("c", 2.0)]);
        assert_eq!(top_k(&s, 2, Direction::Top).unwrap(), vec!["a", "c"]);
        assert_eq!(top_k(&s, 2, Direction::Bottom).unwrap(), vec!["b", "c"]);
        assert_eq!(top_k(&s, 3, Direction::Top).unwrap(), vec!["a", "c", "b"]);
        assert!(top_k(&s, 4, Direction::Top).is_err());
        assert!(top_k(&s, 0, Direction::Top).is_err());
        let tied = scores(&[("z", 1.0), ("y", 1.0), ("x", 1.0)]);
        assert_eq!(top_k(&tied, 2, Direction::Bottom).unwrap(), vec!["x", "y"]);
    }

    #[test]
    fn choose_best_and_singletons() {
        let r = rec("q", "x", &[("m1", 9.0), ("m2", 7.0)]);
        assert_eq!(choose_response(&r, ResponseStrategy::Best, "rm", 0).unwrap().model_id, "m1");
        let tie = rec("q", "x", &[("m2", 5.0), ("m1", 5.0)]);
        assert_eq!(choose_response(&tie, ResponseStrategy::Best, "rm", 0).unwrap().model_id, "m1");
        let one = rec("q", "x", &[("solo", 1.0)]);
        for s in ResponseStrategy::ALL {
            assert_eq!(choose_response(&one, *s, "rm", 42).unwrap().model_id, "solo");
        }
        assert!(choose_response(&r, ResponseStrategy::Best, "other", 0).is_err());
    }

    #[test]
    fn top5_random_stays_in_top_five() {
        let r = rec("q1", "x", &[("a", 1.0), ("b", 7.0), ("c", 3.0), ("d", 6.0), ("e", 5.0), ("f", 2.0), ("g", 4.0)]);
        // brute-force top five by reward: b, d, e, g, c
        let allowed = ["b", "d", "e", "g", "c"];
        for seed in 0..50 {
            let first = choose_response(&r, ResponseStrategy::Top5Random, "rm", seed).unwrap();
            assert!(allowed.contains(&first.model_id.as_str()));
            let again = choose_response(&r, ResponseStrategy::Top5Random, "rm", seed).unwrap();
            assert_eq!(first, again);
        }
    }

    #[test]
    fn random_baseline_examples() {
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("r{i}"), "x", &[("m", 0.0)])).collect();
        let mut all = random_baseline(&recs, 10, 5).unwrap();
        all.sort();
        assert_eq!(all, recs.iter().map(|r| r.id.clone()).collect::<Vec<_>>());
        assert!(random_baseline(&recs, 0, 5).is_err());
        assert!(random_baseline(&recs, 11, 5).is_err());
        assert_eq!(random_baseline(&recs, 4, 9).unwrap(), random_baseline(&recs, 4, 9).unwrap());
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(random_baseline(&rev, 4, 9).unwrap(), random_baseline(&recs, 4, 9).unwrap());
    }

    #[test]
    fn length_baseline_examples() {
        let ten = "one two three four five six seven eight nine ten";
        let recs = vec![
            rec("a", ten, &[("m", 0.0)]),
            rec("b", "one two three", &[("m", 0.0)]),
            rec("c", "one two three four five six seven", &[("m", 0.0)]),
        ];
        assert_eq!(length_baseline(&recs, 1, Direction::Top).unwrap(), vec!["a"]);
        assert_eq!(length_baseline(&recs, 2, Direction::Bottom).unwrap(), vec!["b", "c"]);
        let same = vec![rec("y", "a b", &[("m", 0.0)]), rec("x", "c d", &[("m", 0.0)]), rec("z", "e f", &[("m", 0.0)])];
        assert_eq!(length_baseline(&same, 2, Direction::Top).unwrap(), vec!["x", "y"]);
    }

    fn pair(id: &str) -> SelectedPair {
        SelectedPair {
            instruction_id: id.into(),
            instruction: format!("instruction {id}"),
            response_text: "answer".into(),
            response_model: "m1".into(),
            metric: Metric::Multi,
            metric_value: 1.5,
            cluster_id: Some(2),
            strategy: ResponseStrategy::Best,
            seed: 7,
        }
    }

    #[test]
    fn emit_sft_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        assert_eq!(emit_sft(&[], &p).unwrap(), 0);
        assert_eq!(std::fs::read(&p).unwrap(), b"");

        let p = dir.path().join("two.jsonl");
        assert_eq!(emit_sft(&[pair("b"), pair("a")], &p).unwrap(), 2);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.ends_with('\n'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            r#"{"instruction":"instruction b","output":"answer","meta":{"instruction_id":"b","response_model":"m1","metric":"multi","metric_value":1.5,"cluster_id":2,"strategy":"best","seed":7}}"#
        );
        assert!(lines[1].contains(r#""instruction_id":"a""#));

        let p2 = dir.path().join("again.jsonl");
        emit_sft(&[pair("b"), pair("a")], &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn enums_parse() {
        assert_eq!("top5_random".parse::<ResponseStrategy>().unwrap(), ResponseStrategy::Top5Random);
        assert_eq!("bottom".parse::<Direction>().unwrap(), Direction::Bottom);
        let err = "fancy".parse::<Metric>().unwrap_err().to_string();
        assert!(err.contains("difficulty"), "{err}");
    }

    #[test]
    fn selection_skips_undefined_stability() {
        let recs = vec![rec("a", "x", &[("m", 1.0)]), rec("b", "x", &[("m", 2.0)]), rec("c", "x", &[("m", 3.0)])];
        let mut table = ScoreTable::default();
        for (id, st) in [("a", Some(0.5)), ("b", None), ("c", Some(-0.5))] {
            table.rows.push(crate::metrics::ScoreRow {
                instruction_id: id.into(),
                difficulty: 0.0,
                separability: 0.0,
                stability: st,
                multi: None,
                stability_imputed: false,
            });
        }
        let mut cfg = SelectionConfig::new("rm");
        cfg.metric = Metric::Stability;
        cfg.n_clusters = 0;
        cfg.k = 2;
        let sel = run_selection(&recs, &table, &cfg).unwrap();
        let ids: Vec<_> = sel.pairs.iter().map(|p| p.instruction_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        cfg.k = 3;
        assert!(run_selection(&recs, &table, &cfg).is_err());
        cfg.metric = Metric::Multi;
        cfg.k = 1;
        assert!(run_selection(&recs, &table, &cfg).is_err());
        cfg.metric = Metric::Difficulty;
        cfg.n_clusters = 2;
        assert!(run_selection(&recs, &table, &cfg).is_err(), "no embeddings");
    }

    proptest! {
        #[test]
        fn bottom_is_top_of_negated(v in proptest::collection::vec(-100i32..100, 1..40), k_frac in 0.0f64..1.0) {
            let s: HashMap<String, f64> = v.iter().enumerate().map(|(i, x)| (format!("i{i}"), *x as f64)).collect();
            let neg: HashMap<String, f64> = s.iter().map(|(k, x)| (k.clone(), -x)).collect();
            let k = 1 + ((s.len() - 1) as f64 * k_frac) as usize;
            prop_assert_eq!(top_k(&s, k, Direction::Bottom).unwrap(), top_k(&neg, k, Direction::Top).unwrap());
            if k < s.len() {
                let longer = top_k(&s, k + 1, Direction::Top).unwrap();
                prop_assert_eq!(&longer[..k], &top_k(&s, k, Direction::Top).unwrap()[..]);
            }
        }

        #[test]
        fn best_attains_max(rewards in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
            let names: Vec<String> = (0..rewards.len()).map(|i| format!("m{i}")).collect();
            let pairs: Vec<(&str, f64)> = names.iter().map(String::as_str).zip(rewards.iter().copied()).collect();
            let r = rec("q", "x", &pairs);
            let best = choose_response(&r, ResponseStrategy::Best, "rm", 0).unwrap();
            let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(best.rewards["rm"], max);
        }
    }
}
