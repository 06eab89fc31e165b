use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Map, Value};
use sftpick_core::cluster::ClusterAssignment;
use sftpick_core::embed::{attach_embeddings, EmbedConfig};
use sftpick_core::model::{load_catalog, load_dataset, write_dataset};
use sftpick_core::select::{emit_sft, run_selection};
use sftpick_core::stats::build_report;
use sftpick_core::{InstructionRecord, LoadMode, ModelCatalog, ScoreTable, SelectionConfig, Weights};

use crate::cli::{DatasetArgs, EmbedArgs, ScoreArgs, SelectArgs, StatsArgs};
use crate::config::FileConfig;
use crate::failure::{CmdResult, Failure};
use crate::manifest::RunManifest;

pub const API_KEY_ENV: &str = "SFTPICK_API_KEY";

fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> CmdResult<T> {
    flag.or(file)
        .ok_or_else(|| Failure::Usage(format!("missing required --{name}")))
}

fn from_file<T: FromStr>(value: Option<&String>, key: &str) -> CmdResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .map(|v| v.parse::<T>().map_err(|e| Failure::Usage(format!("config key {key}: {e}"))))
        .transpose()
}

struct Loaded {
    records: Vec<InstructionRecord>,
    input: PathBuf,
    catalog_path: Option<PathBuf>,
    catalog: Option<ModelCatalog>,
    lenient: bool,
}

impl Loaded {
    fn input_paths(&self) -> Vec<&Path> {
        let mut v = vec![self.input.as_path()];
        v.extend(self.catalog_path.as_deref());
        v
    }
}

fn load(args: &DatasetArgs, cfg: &FileConfig) -> CmdResult<Loaded> {
    let input = require(args.input.clone(), cfg.input.clone(), "input")?;
    let catalog_path = args.catalog.clone().or(cfg.catalog.clone());
    let catalog = catalog_path.as_deref().map(load_catalog).transpose()?;
    let lenient = args.lenient || cfg.lenient.unwrap_or(false);
    let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let ds = load_dataset(&input, catalog.as_ref(), mode)?;
    if !ds.rejected.is_empty() {
        log::warn!("{}: skipped {} invalid line(s)", input.display(), ds.rejected.len());
    }
    log::info!("{}: {} record(s)", input.display(), ds.records.len());
    Ok(Loaded {
        records: ds.records,
        input,
        catalog_path,
        catalog,
        lenient,
    })
}

/// Reward-model keys carried by every record.
fn common_reward_keys(records: &[InstructionRecord]) -> BTreeSet<String> {
    let mut iter = records.iter();
    let Some(first) = iter.next() else {
        return BTreeSet::new();
    };
    let mut keys: BTreeSet<String> = first.reward_keys().into_iter().map(String::from).collect();
    for r in iter {
        let these = r.reward_keys();
        keys.retain(|k| these.contains(k.as_str()));
    }
    keys
}

fn resolve_reward_model(records: &[InstructionRecord], requested: Option<String>) -> CmdResult<String> {
    if records.is_empty() {
        return Ok(requested.unwrap_or_default());
    }
    let available = common_reward_keys(records);
    let listed = || available.iter().cloned().collect::<Vec<_>>().join(", ");
    match requested {
        Some(k) if available.contains(&k) => Ok(k),
        Some(k) => Err(Failure::Validation(format!(
            "unknown reward model {k:?}; available: {}",
            listed()
        ))),
        None if available.len() == 1 => Ok(available.into_iter().next().unwrap()),
        None => Err(Failure::Validation(format!(
            "--reward-model is required; available: {}",
            listed()
        ))),
    }
}

fn params(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("parameters are built from object literals"),
    }
}

pub fn cmd_embed(args: EmbedArgs, cfg: &FileConfig) -> CmdResult {
    let endpoint = require(args.endpoint.clone(), cfg.endpoint.clone(), "endpoint")?;
    let out = require(args.out.clone(), cfg.out.clone(), "out")?;
    let mut config = EmbedConfig::new(endpoint);
    config.api_key = std::env::var(API_KEY_ENV).ok().or(cfg.api_key.clone());
    if let Some(b) = args.batch_size.or(cfg.batch_size) {
        config.batch_size = b;
    }
    if let Some(r) = args.max_retries.or(cfg.max_retries) {
        config.max_retries = r;
    }
    if let Some(t) = args.timeout_s.or(cfg.timeout_s) {
        config.timeout_s = t;
    }
    if let Some(w) = args.workers.or(cfg.workers) {
        config.workers = w;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let loaded = load(&args.dataset, cfg)?;
    let records = attach_embeddings(loaded.records.clone(), &config)?;
    write_dataset(&out, &records)?;
    let manifest = RunManifest::new(
        "embed",
        None,
        params(json!({ "endpoint": config.endpoint, "lenient": loaded.lenient })),
        &loaded.input_paths(),
        &[&out],
    )?;
    manifest.write_for(&out)?;
    log::info!("wrote {} record(s) to {}", records.len(), out.display());
    Ok(())
}

pub fn cmd_score(args: ScoreArgs, cfg: &FileConfig) -> CmdResult {
    let out = require(args.out.clone(), cfg.out.clone(), "out")?;
    if args.dataset.catalog.is_none() && cfg.catalog.is_none() {
        return Err(Failure::Usage("missing required --catalog".into()));
    }
    let weights = match (args.weights, &cfg.weights) {
        (Some(w), _) => w,
        (None, Some(w)) => w.resolve()?,
        (None, None) => Weights::default(),
    };
    let loaded = load(&args.dataset, cfg)?;
    let catalog = loaded.catalog.as_ref().expect("catalog checked above");
    let reward_model = resolve_reward_model(&loaded.records, args.reward_model.or(cfg.reward_model.clone()))?;

    let table = sftpick_core::score_and_aggregate(&loaded.records, catalog, &reward_model, weights)?;
    table.write(&out)?;
    let manifest = RunManifest::new(
        "score",
        None,
        params(json!({
            "reward_model": reward_model,
            "weights": [weights.difficulty, weights.separability, weights.stability],
            "variance_divisor": "population",
            "lenient": loaded.lenient,
        })),
        &loaded.input_paths(),
        &[&out],
    )?;
    manifest.write_for(&out)?;
    log::info!("wrote {} score row(s) to {}", table.len(), out.display());
    Ok(())
}

pub fn cmd_select(args: SelectArgs, cfg: &FileConfig) -> CmdResult {
    let out = require(args.out.clone(), cfg.out.clone(), "out")?;
    let assignments_out = args.assignments_out.clone().or(cfg.assignments_out.clone());
    let metric = match args.metric {
        Some(m) => m,
        None => from_file(cfg.metric.as_ref(), "metric")?.unwrap_or_default(),
    };
    let direction = match args.direction {
        Some(d) => d,
        None => from_file(cfg.direction.as_ref(), "direction")?.unwrap_or_default(),
    };
    let response_strategy = match args.response_strategy {
        Some(s) => s,
        None => from_file(cfg.response_strategy.as_ref(), "response_strategy")?.unwrap_or_default(),
    };
    let scores_path = args.scores.clone().or(cfg.scores.clone());
    let needs_table = !matches!(metric, sftpick_core::Metric::Random | sftpick_core::Metric::Length);
    if needs_table && scores_path.is_none() {
        return Err(Failure::Usage(format!("missing required --scores for metric {metric}")));
    }

    let loaded = load(&args.dataset, cfg)?;
    let mut config = SelectionConfig::new(resolve_reward_model(
        &loaded.records,
        args.reward_model.or(cfg.reward_model.clone()),
    )?);
    config.metric = metric;
    config.direction = direction;
    config.response_strategy = response_strategy;
    config.k = args.k.or(cfg.k).unwrap_or(config.k);
    config.n_clusters = args.clusters.or(cfg.clusters).unwrap_or(config.n_clusters);
    config.seed = args.seed.or(cfg.seed).unwrap_or(config.seed);
    if config.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }

    let table = match &scores_path {
        Some(p) => {
            let t = ScoreTable::read(p)?;
            let covered: BTreeSet<&str> = t.rows.iter().map(|r| r.instruction_id.as_str()).collect();
            if let Some(r) = loaded.records.iter().find(|r| !covered.contains(r.id.as_str())) {
                return Err(Failure::Validation(format!(
                    "{} has no score row for record {:?}",
                    p.display(),
                    r.id
                )));
            }
            t
        }
        None => ScoreTable::default(),
    };

    let selection = run_selection(&loaded.records, &table, &config)?;
    let written = emit_sft(&selection.pairs, &out)?;
    let mut outputs: Vec<&Path> = vec![&out];
    if let Some(path) = &assignments_out {
        let assignments: &[ClusterAssignment] = selection.assignments.as_deref().unwrap_or(&[]);
        sftpick_core::io::write_jsonl(path, assignments)?;
        outputs.push(path);
    }

    let mut inputs = loaded.input_paths();
    inputs.extend(scores_path.as_deref());
    let manifest = RunManifest::new(
        "select",
        Some(config.seed),
        params(json!({
            "metric": config.metric,
            "direction": config.direction,
            "k": config.k,
            "clusters": config.n_clusters,
            "kmeans": {"max_iter": 100, "tol": 1e-6},
            "response_strategy": config.response_strategy,
            "reward_model": config.reward_model,
            "lenient": loaded.lenient,
        })),
        &inputs,
        &outputs,
    )?;
    for path in &outputs {
        manifest.write_for(path)?;
    }
    log::info!("wrote {written} pair(s) to {}", out.display());
    Ok(())
}

pub fn cmd_stats(args: StatsArgs, cfg: &FileConfig) -> CmdResult {
    let out = require(args.out.clone(), cfg.out.clone(), "out")?;
    let scores_path = require(args.scores.clone(), cfg.scores.clone(), "scores")?;
    let assignments_path = args.assignments.clone().or(cfg.assignments.clone());
    let loaded = load(&args.dataset, cfg)?;
    let table = ScoreTable::read(&scores_path)?;
    let assignments: Option<Vec<ClusterAssignment>> = assignments_path
        .as_deref()
        .map(sftpick_core::io::read_jsonl)
        .transpose()?;

    let report = build_report(loaded.records.len(), &table, assignments.as_deref());
    sftpick_core::io::write_json_pretty(&out, &report)?;
    let mut inputs = loaded.input_paths();
    inputs.push(&scores_path);
    inputs.extend(assignments_path.as_deref());
    let manifest = RunManifest::new(
        "stats",
        None,
        params(json!({ "bins": sftpick_core::stats::HISTOGRAM_BINS, "lenient": loaded.lenient })),
        &inputs,
        &[&out],
    )?;
    manifest.write_for(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, keys: &[&str]) -> InstructionRecord {
        let rewards = keys.iter().map(|k| (k.to_string(), 1.0)).collect();
        InstructionRecord {
            id: id.into(),
            instruction: "x".into(),
            responses: vec![sftpick_core::ResponseEntry {
                model_id: "m".into(),
                text: "t".into(),
                rewards,
            }],
            embedding: None,
        }
    }

    #[test]
    fn reward_model_resolution() {
        let recs = vec![rec("a", &["armo", "sky"]), rec("b", &["sky", "armo", "extra"])];
        assert_eq!(resolve_reward_model(&recs, Some("sky".into())).unwrap(), "sky");
        let err = resolve_reward_model(&recs, Some("nope".into())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("armo, sky"), "{err}");
        assert!(resolve_reward_model(&recs, None).is_err());
        assert_eq!(resolve_reward_model(&recs[..1], Some("armo".into())).unwrap(), "armo");
        assert_eq!(resolve_reward_model(&[rec("c", &["only"])], None).unwrap(), "only");
        assert_eq!(resolve_reward_model(&[], None).unwrap(), "");
    }
}
