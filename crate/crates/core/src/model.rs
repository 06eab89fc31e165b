//! Domain types, catalog and dataset loading.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One generator model: its id, the family it belongs to and its size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub family: String,
    /// Parameter count in billions.
    pub params_b: f64,
}

/// The generator zoo. Model ids are unique; families group models of one
/// release line at different sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCatalog", into = "RawCatalog")]
pub struct ModelCatalog {
    models: Vec<ModelInfo>,
    #[serde(skip)]
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawCatalog {
    models: Vec<ModelInfo>,
}

impl TryFrom<RawCatalog> for ModelCatalog {
    type Error = Error;

    fn try_from(raw: RawCatalog) -> Result<Self> {
        ModelCatalog::new(raw.models)
    }
}

impl From<ModelCatalog> for RawCatalog {
    fn from(c: ModelCatalog) -> Self {
        RawCatalog { models: c.models }
    }
}

impl ModelCatalog {
    pub fn new(models: Vec<ModelInfo>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(models.len());
        for (idx, m) in models.iter().enumerate() {
            if m.id.is_empty() {
                return Err(Error::validation(format!("model #{idx}: empty id")));
            }
            if m.family.is_empty() {
                return Err(Error::validation(format!("model {:?}: empty family", m.id)));
            }
            if !m.params_b.is_finite() || m.params_b <= 0.0 {
                return Err(Error::validation(format!(
                    "model {:?}: params_b must be positive, got {}",
                    m.id, m.params_b
                )));
            }
            if by_id.insert(m.id.clone(), idx).is_some() {
                return Err(Error::validation(format!("duplicate model id {:?}", m.id)));
            }
        }
        Ok(ModelCatalog { models, by_id })
    }

    pub fn models(&self) -> &[ModelInfo] {
        &self.models
    }

    pub fn get(&self, id: &str) -> Option<&ModelInfo> {
        self.by_id.get(id).map(|&i| &self.models[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Family name to member models, in catalog order.
    pub fn families(&self) -> BTreeMap<&str, Vec<&ModelInfo>> {
        let mut out: BTreeMap<&str, Vec<&ModelInfo>> = BTreeMap::new();
        for m in &self.models {
            out.entry(m.family.as_str()).or_default().push(m);
        }
        out
    }

    /// Families with at least two models, i.e. those that admit a size ranking.
    pub fn rankable_families(&self) -> Vec<&str> {
        self.families()
            .into_iter()
            .filter(|(_, ms)| ms.len() >= 2)
            .map(|(f, _)| f)
            .collect()
    }
}

pub fn load_catalog(path: &Path) -> Result<ModelCatalog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_catalog(text: &str) -> Result<ModelCatalog> {
    let raw: RawCatalog = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    ModelCatalog::new(raw.models)
}

/// A single model's answer to an instruction together with its reward scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEntry {
    #[serde(rename = "model")]
    pub model_id: String,
    pub text: String,
    /// Reward-model key to score. Scales differ between reward models and are
    /// never clipped.
    pub rewards: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub instruction: String,
    pub responses: Vec<ResponseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl InstructionRecord {
    /// Reward-model keys present on the responses (identical across responses
    /// for a validated record).
    pub fn reward_keys(&self) -> BTreeSet<&str> {
        self.responses
            .iter()
            .flat_map(|r| r.rewards.keys().map(String::as_str))
            .collect()
    }

    /// Scores from one reward model, in response order.
    pub fn scores(&self, reward_model: &str) -> Result<Vec<f64>> {
        self.responses
            .iter()
            .map(|r| {
                r.rewards.get(reward_model).copied().ok_or_else(|| {
                    Error::validation(format!(
                        "record {:?}: response from {:?} has no reward {:?}",
                        self.id, r.model_id, reward_model
                    ))
                })
            })
            .collect()
    }

    /// Checks every per-record invariant. `catalog` enables the model
    /// reference check; `dim` is the dataset-wide embedding dimension, if known.
    pub fn validate(&self, catalog: Option<&ModelCatalog>, dim: Option<usize>) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(format!("record {:?}: {msg}", self.id)));
        if self.id.is_empty() {
            return Err(Error::validation("record with empty id"));
        }
        if self.instruction.is_empty() {
            return fail("empty instruction".into());
        }
        if self.responses.is_empty() {
            return fail("no responses".into());
        }
        let mut seen = HashSet::new();
        let first_keys: BTreeSet<&String> = self.responses[0].rewards.keys().collect();
        for r in &self.responses {
            if !seen.insert(r.model_id.as_str()) {
                return fail(format!("duplicate response from model {:?}", r.model_id));
            }
            if let Some(cat) = catalog {
                if !cat.contains(&r.model_id) {
                    return fail(format!("unknown model {:?}", r.model_id));
                }
            }
            if r.rewards.is_empty() {
                return fail(format!("response from {:?} has no rewards", r.model_id));
            }
            let keys: BTreeSet<&String> = r.rewards.keys().collect();
            if keys != first_keys {
                return fail(format!(
                    "response from {:?} has reward keys {:?}, expected {:?}",
                    r.model_id, keys, first_keys
                ));
            }
            if let Some((k, v)) = r.rewards.iter().find(|(_, v)| !v.is_finite()) {
                return fail(format!("non-finite reward {k:?}={v} from {:?}", r.model_id));
            }
        }
        if let Some(e) = &self.embedding {
            if e.is_empty() {
                return fail("empty embedding".into());
            }
            if let Some(d) = dim {
                if e.len() != d {
                    return fail(format!(
                        "embedding dimension {} differs from dataset dimension {d}",
                        e.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Abort on the first bad line.
    #[default]
    Strict,
    /// Skip bad lines and report them.
    Lenient,
}

/// A rejected dataset line.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub record_id: Option<String>,
    pub error_kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    Schema,
    Validation,
}

impl Diagnostic {
    pub fn into_error(self) -> Error {
        match self.error_kind {
            DiagnosticKind::Schema => Error::Parse {
                line: self.line,
                message: self.message,
            },
            DiagnosticKind::Validation => {
                Error::Validation(format!("line {}: {}", self.line, self.message))
            }
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Streaming, validating JSONL reader. Yields one item per input line:
/// either a record or a diagnostic carrying the line number.
pub struct DatasetReader<'a, R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    catalog: Option<&'a ModelCatalog>,
    seen_ids: HashSet<String>,
    dim: Option<usize>,
}

impl<'a, R: BufRead> DatasetReader<'a, R> {
    pub fn new(reader: R, catalog: Option<&'a ModelCatalog>) -> Self {
        DatasetReader {
            lines: reader.lines(),
            line_no: 0,
            catalog,
            seen_ids: HashSet::new(),
            dim: None,
        }
    }

    /// Embedding dimension fixed by the first accepted embedded record.
    pub fn embedding_dim(&self) -> Option<usize> {
        self.dim
    }

    fn check_line(&mut self, line: &str) -> std::result::Result<InstructionRecord, Diagnostic> {
        let diag = |kind, id: Option<String>, message: String| Diagnostic {
            line: self.line_no,
            record_id: id,
            error_kind: kind,
            message,
        };
        if line.trim().is_empty() {
            return Err(diag(DiagnosticKind::Schema, None, "blank line".into()));
        }
        let record: InstructionRecord = serde_json::from_str(line)
            .map_err(|e| diag(DiagnosticKind::Schema, None, e.to_string()))?;
        if let Err(e) = record.validate(self.catalog, self.dim) {
            return Err(diag(
                DiagnosticKind::Validation,
                Some(record.id.clone()),
                e.to_string(),
            ));
        }
        if self.seen_ids.contains(&record.id) {
            return Err(diag(
                DiagnosticKind::Validation,
                Some(record.id.clone()),
                format!("duplicate record id {:?}", record.id),
            ));
        }
        self.seen_ids.insert(record.id.clone());
        if let (None, Some(e)) = (self.dim, &record.embedding) {
            self.dim = Some(e.len());
        }
        Ok(record)
    }
}

impl<R: BufRead> Iterator for DatasetReader<'_, R> {
    type Item = std::result::Result<InstructionRecord, Diagnostic>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = self.lines.next()?;
        self.line_no += 1;
        Some(match line {
            Ok(l) => self.check_line(&l),
            Err(e) => Err(Diagnostic {
                line: self.line_no,
                record_id: None,
                error_kind: DiagnosticKind::Schema,
                message: e.to_string(),
            }),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub records: Vec<InstructionRecord>,
    pub rejected: Vec<Diagnostic>,
    pub embedding_dim: Option<usize>,
}

impl LoadedDataset {
    pub fn line_count(&self) -> usize {
        self.records.len() + self.rejected.len()
    }
}

/// Opens a dataset JSONL as a validating stream.
pub fn open_dataset<'a>(
    path: &Path,
    catalog: Option<&'a ModelCatalog>,
) -> Result<DatasetReader<'a, BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(DatasetReader::new(BufReader::new(file), catalog))
}

pub fn load_dataset(
    path: &Path,
    catalog: Option<&ModelCatalog>,
    mode: LoadMode,
) -> Result<LoadedDataset> {
    collect_dataset(open_dataset(path, catalog)?, mode)
}

pub fn collect_dataset<R: BufRead>(
    mut reader: DatasetReader<'_, R>,
    mode: LoadMode,
) -> Result<LoadedDataset> {
    let mut out = LoadedDataset::default();
    for item in reader.by_ref() {
        match item {
            Ok(r) => out.records.push(r),
            Err(d) if mode == LoadMode::Strict => return Err(d.into_error()),
            Err(d) => {
                log::warn!("skipping {d}");
                out.rejected.push(d);
            }
        }
    }
    out.embedding_dim = reader.embedding_dim();
    Ok(out)
}

pub fn write_dataset(path: &Path, records: &[InstructionRecord]) -> Result<usize> {
    crate::io::write_jsonl(path, records)
}
